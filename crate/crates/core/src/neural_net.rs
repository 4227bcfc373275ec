//! Fully connected binary classifier trained from scratch: rectifier hidden
//! layers, sigmoid output, binary cross-entropy, ADADELTA updates, inverted
//! dropout, and AUROC-based early stopping. The last hidden layer doubles as
//! the latent representation used for local-region identification.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::Dataset;
use crate::exec::{self, derive_seed};
use crate::metrics;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden_layer_sizes: Vec<usize>,
    pub input_dropout_ratio: f64,
    pub hidden_dropout_ratio: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden_layer_sizes: vec![64, 32],
            input_dropout_ratio: 0.1,
            hidden_dropout_ratio: 0.3,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden_layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("hidden layer sizes must be >= 1".to_string()));
        }
        for ratio in [self.input_dropout_ratio, self.hidden_dropout_ratio] {
            if !(0.0..1.0).contains(&ratio) {
                return Err(Error::Config(format!("dropout ratio {ratio} not in [0,1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// ADADELTA decay.
    pub rho: f64,
    /// ADADELTA conditioning constant.
    pub epsilon: f64,
    pub minibatch_size: usize,
    pub max_epochs: usize,
    /// Relative improvement below which an epoch counts as non-improving.
    pub stopping_tolerance: f64,
    /// Consecutive non-improving epochs before stopping.
    pub stopping_rounds: usize,
    /// Apply minibatch updates concurrently without locks. Nondeterministic;
    /// requires the `parallel` feature (falls back to sequential otherwise).
    pub lock_free_parallel: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            rho: 0.99,
            epsilon: 1e-8,
            minibatch_size: 32,
            max_epochs: 200,
            stopping_tolerance: 0.01,
            stopping_rounds: 10,
            lock_free_parallel: false,
        }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho {} not in (0,1)", self.rho)));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be > 0".to_string()));
        }
        if self.stopping_rounds == 0 {
            return Err(Error::Config("stopping_rounds must be >= 1".to_string()));
        }
        if self.minibatch_size == 0 {
            return Err(Error::Config("minibatch_size must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// A dense layer: `outputs x inputs` weights in row-major order plus biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut sum = self.biases[o];
            for (w, a) in row.iter().zip(input) {
                sum += w * a;
            }
            out.push(sum);
        }
    }
}

/// The trained classifier: hidden layers followed by a single sigmoid output
/// unit. Scoring and latent extraction are pure and reentrant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNetwork {
    pub layers: Vec<Layer>,
    pub network_config: NetworkConfig,
    pub training_config: TrainingConfig,
    /// Validation AUROC after each trained epoch.
    pub history: Vec<f64>,
    /// 1-based epoch of the returned snapshot (0 when untrained).
    pub epoch_selected: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Initializes a network with the uniform-adaptive scheme: each weight drawn
/// uniformly from [-r, r] with r = sqrt(6 / (fan_in + fan_out)); biases zero.
pub fn init_network(input_dim: usize, config: &NetworkConfig) -> Result<TrainedNetwork> {
    if input_dim == 0 {
        return Err(Error::Config("input dimension must be >= 1".to_string()));
    }
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut dims = vec![input_dim];
    dims.extend(&config.hidden_layer_sizes);
    dims.push(1);

    let layers = dims
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-r..=r))
                .collect();
            Layer {
                inputs: fan_in,
                outputs: fan_out,
                weights,
                biases: vec![0.0; fan_out],
            }
        })
        .collect();

    Ok(TrainedNetwork {
        layers,
        network_config: config.clone(),
        training_config: TrainingConfig::default(),
        history: Vec::new(),
        epoch_selected: 0,
    })
}

/// Inference-mode forward pass outputs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Post-rectifier activations of each hidden layer.
    pub hidden_activations: Vec<Vec<f64>>,
    pub score: f64,
}

/// Activations and dropout masks recorded during a training-mode pass.
struct ForwardTrace {
    /// a[0] is the (masked) input; a[l] the masked activation of hidden l.
    activations: Vec<Vec<f64>>,
    /// Pre-mask rectifier outputs of each hidden layer (index 1..).
    raw_hidden: Vec<Vec<f64>>,
    /// Inverted-dropout coefficients per unit (0 or 1/(1-p)); masks[0] is the
    /// input mask.
    masks: Vec<Vec<f64>>,
    score: f64,
}

fn dropout_mask(len: usize, ratio: f64, rng: &mut ChaCha20Rng) -> Vec<f64> {
    if ratio == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 - ratio;
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

impl TrainedNetwork {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.inputs).unwrap_or(0)
    }

    pub fn latent_dim(&self) -> usize {
        let n = self.layers.len();
        self.layers[n - 1].inputs
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Inference-mode forward pass: no dropout masks, no rescaling.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardPass> {
        self.check_input(x)?;
        let hidden_count = self.layers.len() - 1;
        let mut hidden_activations = Vec::with_capacity(hidden_count);
        let mut current = x.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers[..hidden_count] {
            layer.affine(&current, &mut z);
            current = z.iter().map(|&v| v.max(0.0)).collect();
            hidden_activations.push(current.clone());
        }
        self.layers[hidden_count].affine(&current, &mut z);
        Ok(ForwardPass {
            hidden_activations,
            score: sigmoid(z[0]),
        })
    }

    /// Prediction score in (0,1) for one instance.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.score)
    }

    /// Last-hidden-layer activations (the latent code), dropout disabled.
    pub fn latent(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut pass = self.forward(x)?;
        pass.hidden_activations
            .pop()
            .ok_or_else(|| Error::Config("network has no hidden layer".to_string()))
    }

    /// Training-mode forward pass with inverted dropout on the input and on
    /// every hidden activation.
    fn forward_train(&self, x: &[f64], rng: &mut ChaCha20Rng) -> ForwardTrace {
        let hidden_count = self.layers.len() - 1;
        let input_mask = dropout_mask(x.len(), self.network_config.input_dropout_ratio, rng);
        let masked_input: Vec<f64> = x.iter().zip(&input_mask).map(|(v, m)| v * m).collect();

        let mut activations = vec![masked_input];
        let mut raw_hidden = vec![Vec::new()];
        let mut masks = vec![input_mask];
        let mut z = Vec::new();

        for layer in &self.layers[..hidden_count] {
            layer.affine(activations.last().unwrap(), &mut z);
            let raw: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            let mask = dropout_mask(raw.len(), self.network_config.hidden_dropout_ratio, rng);
            let masked: Vec<f64> = raw.iter().zip(&mask).map(|(v, m)| v * m).collect();
            raw_hidden.push(raw);
            masks.push(mask);
            activations.push(masked);
        }
        self.layers[hidden_count].affine(activations.last().unwrap(), &mut z);
        ForwardTrace {
            activations,
            raw_hidden,
            masks,
            score: sigmoid(z[0]),
        }
    }

    /// Mean binary cross-entropy over a batch, dropout disabled.
    pub fn batch_loss(&self, features: &[&[f64]], targets: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in features.iter().zip(targets) {
            let s = self.score(x)?.clamp(1e-12, 1.0 - 1e-12);
            total -= y * s.ln() + (1.0 - y) * (1.0 - s).ln();
        }
        Ok(total / features.len() as f64)
    }

    /// Analytic gradients of the mean cross-entropy, dropout disabled.
    /// Groups are ordered layer by layer: weights then biases.
    pub fn batch_gradients(&self, features: &[&[f64]], targets: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut grads = new_gradients(&self.layers);
        for (x, &y) in features.iter().zip(targets) {
            self.check_input(x)?;
            let trace = self.forward_without_dropout(x);
            accumulate_instance_gradients(&self.layers, &trace, y, &mut grads);
        }
        let scale = 1.0 / features.len() as f64;
        for group in &mut grads {
            for g in group.iter_mut() {
                *g *= scale;
            }
        }
        Ok(grads)
    }

    fn forward_without_dropout(&self, x: &[f64]) -> ForwardTrace {
        let hidden_count = self.layers.len() - 1;
        let mut activations = vec![x.to_vec()];
        let mut raw_hidden = vec![Vec::new()];
        let mut masks = vec![vec![1.0; x.len()]];
        let mut z = Vec::new();
        for layer in &self.layers[..hidden_count] {
            layer.affine(activations.last().unwrap(), &mut z);
            let raw: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            masks.push(vec![1.0; raw.len()]);
            raw_hidden.push(raw.clone());
            activations.push(raw);
        }
        self.layers[hidden_count].affine(activations.last().unwrap(), &mut z);
        ForwardTrace {
            activations,
            raw_hidden,
            masks,
            score: sigmoid(z[0]),
        }
    }

    /// Adds `delta` to one parameter; `group` indexes the gradient group
    /// layout of [`batch_gradients`].
    pub fn nudge_parameter(&mut self, group: usize, index: usize, delta: f64) {
        let layer = group / 2;
        if group % 2 == 0 {
            self.layers[layer].weights[index] += delta;
        } else {
            self.layers[layer].biases[index] += delta;
        }
    }

    pub fn parameter_group_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.biases.len()])
            .collect()
    }
}

fn new_gradients(layers: &[Layer]) -> Vec<Vec<f64>> {
    layers
        .iter()
        .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]])
        .collect()
}

/// Backpropagates one instance through the recorded trace, adding into
/// `grads` (layout: layer0 weights, layer0 biases, layer1 weights, ...).
fn accumulate_instance_gradients(
    layers: &[Layer],
    trace: &ForwardTrace,
    target: f64,
    grads: &mut [Vec<f64>],
) {
    // d loss / d z_out for sigmoid + cross-entropy.
    let mut delta = vec![trace.score - target];

    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let input = &trace.activations[l];
        let (w_grad, rest) = grads[2 * l..].split_first_mut().expect("group exists");
        let b_grad = &mut rest[0];
        for o in 0..layer.outputs {
            let row = &mut w_grad[o * layer.inputs..(o + 1) * layer.inputs];
            for (g, a) in row.iter_mut().zip(input) {
                *g += delta[o] * a;
            }
            b_grad[o] += delta[o];
        }
        if l == 0 {
            break;
        }
        // Propagate to the previous layer's pre-activation.
        let mut upstream = vec![0.0; layer.inputs];
        for o in 0..layer.outputs {
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (u, w) in upstream.iter_mut().zip(row) {
                *u += w * delta[o];
            }
        }
        let raw = &trace.raw_hidden[l];
        let mask = &trace.masks[l];
        delta = upstream
            .iter()
            .zip(raw.iter().zip(mask))
            .map(|(u, (h, m))| if *h > 0.0 { u * m } else { 0.0 })
            .collect();
    }
}

/// Per-parameter ADADELTA accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaState {
    pub rho: f64,
    pub epsilon: f64,
    avg_sq_grad: Vec<f64>,
    avg_sq_update: Vec<f64>,
}

impl AdadeltaState {
    pub fn new(len: usize, rho: f64, epsilon: f64) -> Self {
        AdadeltaState {
            rho,
            epsilon,
            avg_sq_grad: vec![0.0; len],
            avg_sq_update: vec![0.0; len],
        }
    }

    /// One update: E[g²] ← ρE[g²] + (1−ρ)g²;
    /// Δx = −(√(E[Δx²]+ε)/√(E[g²]+ε))·g; E[Δx²] ← ρE[Δx²] + (1−ρ)Δx²;
    /// params += Δx.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        for i in 0..params.len() {
            let g = grads[i];
            self.avg_sq_grad[i] = self.rho * self.avg_sq_grad[i] + (1.0 - self.rho) * g * g;
            let dx = -((self.avg_sq_update[i] + self.epsilon).sqrt()
                / (self.avg_sq_grad[i] + self.epsilon).sqrt())
                * g;
            self.avg_sq_update[i] = self.rho * self.avg_sq_update[i] + (1.0 - self.rho) * dx * dx;
            params[i] += dx;
        }
    }

    pub fn avg_sq_grad(&self) -> &[f64] {
        &self.avg_sq_grad
    }

    pub fn avg_sq_update(&self) -> &[f64] {
        &self.avg_sq_update
    }
}

fn check_labels(dataset: &Dataset, which: &str) -> Result<()> {
    let mut seen = [false, false];
    for instance in &dataset.instances {
        seen[(instance.label == 1) as usize] = true;
    }
    if !(seen[0] && seen[1]) {
        return Err(Error::DegenerateLabels(format!(
            "{which} set contains a single class"
        )));
    }
    Ok(())
}

/// Trains the classifier with minibatch backpropagation and ADADELTA,
/// recording validation AUROC after each epoch and returning the best-epoch
/// snapshot. Deterministic under a fixed seed in the default sequential mode.
pub fn train(
    train_set: &Dataset,
    validation_set: &Dataset,
    net_config: &NetworkConfig,
    train_config: &TrainingConfig,
) -> Result<TrainedNetwork> {
    train_config.validate()?;
    if validation_set.instances.is_empty() {
        return Err(Error::InvalidInput("validation set is empty".to_string()));
    }
    let input_dim = train_set.schema.dimension();
    if validation_set.schema.dimension() != input_dim {
        return Err(Error::DimensionMismatch {
            expected: input_dim,
            actual: validation_set.schema.dimension(),
        });
    }
    check_labels(train_set, "training")?;
    check_labels(validation_set, "validation")?;

    let mut network = init_network(input_dim, net_config)?;
    network.training_config = train_config.clone();
    if train_config.max_epochs == 0 {
        return Ok(network);
    }

    let mut optimizer: Vec<AdadeltaState> = network
        .parameter_group_sizes()
        .iter()
        .map(|&len| AdadeltaState::new(len, train_config.rho, train_config.epsilon))
        .collect();

    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(derive_seed(net_config.seed, 1));
    let dropout_base = derive_seed(net_config.seed, 2);
    let validation_labels = validation_set.labels();

    let mut best_auroc: Option<f64> = None;
    let mut best_snapshot = network.layers.clone();
    let mut best_epoch = 0usize;
    let mut non_improving = 0usize;
    let mut history = Vec::new();
    let mut indices: Vec<usize> = (0..train_set.instances.len()).collect();

    for epoch in 1..=train_config.max_epochs {
        indices.shuffle(&mut shuffle_rng);
        let epoch_seed = derive_seed(dropout_base, epoch as u64);

        let ran_lock_free = train_config.lock_free_parallel
            && run_epoch_lock_free(
                &mut network,
                &mut optimizer,
                train_set,
                &indices,
                train_config.minibatch_size,
                epoch_seed,
            );
        if !ran_lock_free {
            run_epoch_sequential(
                &mut network,
                &mut optimizer,
                train_set,
                &indices,
                train_config.minibatch_size,
                epoch_seed,
            );
        }

        let scores = predict_scores(&network, validation_set)?;
        let auroc = metrics::roc_and_auroc(&scores, &validation_labels)?.auroc;
        history.push(auroc);

        let improved = match best_auroc {
            None => true,
            Some(best) => auroc > best + train_config.stopping_tolerance * best.abs(),
        };
        if best_auroc.is_none_or(|best| auroc > best) {
            best_auroc = Some(auroc);
            best_snapshot = network.layers.clone();
            best_epoch = epoch;
        }
        if improved {
            non_improving = 0;
        } else {
            non_improving += 1;
            if non_improving >= train_config.stopping_rounds {
                break;
            }
        }
    }

    network.layers = best_snapshot;
    network.history = history;
    network.epoch_selected = best_epoch;
    Ok(network)
}

fn run_epoch_sequential(
    network: &mut TrainedNetwork,
    optimizer: &mut [AdadeltaState],
    train_set: &Dataset,
    indices: &[usize],
    minibatch_size: usize,
    epoch_seed: u64,
) {
    let mut dropout_rng = ChaCha20Rng::seed_from_u64(epoch_seed);
    for batch in indices.chunks(minibatch_size) {
        let mut grads = new_gradients(&network.layers);
        for &i in batch {
            let instance = &train_set.instances[i];
            let trace = network.forward_train(&instance.features, &mut dropout_rng);
            accumulate_instance_gradients(
                &network.layers,
                &trace,
                instance.label as f64,
                &mut grads,
            );
        }
        let scale = 1.0 / batch.len() as f64;
        for group in &mut grads {
            for g in group.iter_mut() {
                *g *= scale;
            }
        }
        apply_gradients(network, optimizer, &grads);
    }
}

fn apply_gradients(network: &mut TrainedNetwork, optimizer: &mut [AdadeltaState], grads: &[Vec<f64>]) {
    for (l, layer) in network.layers.iter_mut().enumerate() {
        optimizer[2 * l].step(&mut layer.weights, &grads[2 * l]);
        optimizer[2 * l + 1].step(&mut layer.biases, &grads[2 * l + 1]);
    }
}

/// Lock-free concurrent minibatch updates (hogwild style): workers read and
/// write shared parameters and optimizer state through relaxed atomics with
/// no synchronization, trading determinism for throughput. Returns false when
/// built without the `parallel` feature so the caller falls back.
#[cfg(feature = "parallel")]
fn run_epoch_lock_free(
    network: &mut TrainedNetwork,
    optimizer: &mut [AdadeltaState],
    train_set: &Dataset,
    indices: &[usize],
    minibatch_size: usize,
    epoch_seed: u64,
) -> bool {
    use rayon::prelude::*;
    use std::sync::atomic::{AtomicU64, Ordering};

    fn pack(values: &[f64]) -> Vec<AtomicU64> {
        values.iter().map(|v| AtomicU64::new(v.to_bits())).collect()
    }
    fn unpack(atoms: &[AtomicU64]) -> Vec<f64> {
        atoms
            .iter()
            .map(|a| f64::from_bits(a.load(Ordering::Relaxed)))
            .collect()
    }

    let groups: Vec<Vec<AtomicU64>> = network
        .layers
        .iter()
        .flat_map(|l| [pack(&l.weights), pack(&l.biases)])
        .collect();
    let eg2: Vec<Vec<AtomicU64>> = optimizer.iter().map(|s| pack(s.avg_sq_grad())).collect();
    let edx2: Vec<Vec<AtomicU64>> = optimizer.iter().map(|s| pack(s.avg_sq_update())).collect();
    let shapes: Vec<(usize, usize)> = network.layers.iter().map(|l| (l.inputs, l.outputs)).collect();
    let (rho, epsilon) = (optimizer[0].rho, optimizer[0].epsilon);
    let config = network.network_config.clone();
    let training_config = network.training_config.clone();

    let batches: Vec<&[usize]> = indices.chunks(minibatch_size).collect();
    batches.par_iter().enumerate().for_each(|(batch_index, batch)| {
        // Snapshot current parameters into a private network.
        let layers: Vec<Layer> = shapes
            .iter()
            .enumerate()
            .map(|(l, &(inputs, outputs))| Layer {
                inputs,
                outputs,
                weights: unpack(&groups[2 * l]),
                biases: unpack(&groups[2 * l + 1]),
            })
            .collect();
        let snapshot = TrainedNetwork {
            layers,
            network_config: config.clone(),
            training_config: training_config.clone(),
            history: Vec::new(),
            epoch_selected: 0,
        };

        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(epoch_seed, batch_index as u64));
        let mut grads = new_gradients(&snapshot.layers);
        for &i in *batch {
            let instance = &train_set.instances[i];
            let trace = snapshot.forward_train(&instance.features, &mut rng);
            accumulate_instance_gradients(&snapshot.layers, &trace, instance.label as f64, &mut grads);
        }
        let scale = 1.0 / batch.len() as f64;

        // Racy read-modify-write ADADELTA, by design.
        for (group_index, group_grads) in grads.iter().enumerate() {
            let params = &groups[group_index];
            let eg = &eg2[group_index];
            let edx = &edx2[group_index];
            for (i, raw) in group_grads.iter().enumerate() {
                let g = raw * scale;
                let mut eg_v = f64::from_bits(eg[i].load(Ordering::Relaxed));
                eg_v = rho * eg_v + (1.0 - rho) * g * g;
                eg[i].store(eg_v.to_bits(), Ordering::Relaxed);
                let mut edx_v = f64::from_bits(edx[i].load(Ordering::Relaxed));
                let dx = -((edx_v + epsilon).sqrt() / (eg_v + epsilon).sqrt()) * g;
                edx_v = rho * edx_v + (1.0 - rho) * dx * dx;
                edx[i].store(edx_v.to_bits(), Ordering::Relaxed);
                let p = f64::from_bits(params[i].load(Ordering::Relaxed));
                params[i].store((p + dx).to_bits(), Ordering::Relaxed);
            }
        }
    });

    for (l, layer) in network.layers.iter_mut().enumerate() {
        layer.weights = unpack(&groups[2 * l]);
        layer.biases = unpack(&groups[2 * l + 1]);
    }
    for (s, state) in optimizer.iter_mut().enumerate() {
        state.avg_sq_grad = unpack(&eg2[s]);
        state.avg_sq_update = unpack(&edx2[s]);
    }
    true
}

#[cfg(not(feature = "parallel"))]
fn run_epoch_lock_free(
    _network: &mut TrainedNetwork,
    _optimizer: &mut [AdadeltaState],
    _train_set: &Dataset,
    _indices: &[usize],
    _minibatch_size: usize,
    _epoch_seed: u64,
) -> bool {
    false
}

/// Inference-mode scores for every instance, in dataset order.
pub fn predict_scores(network: &TrainedNetwork, data: &Dataset) -> Result<Vec<f64>> {
    if data.schema.dimension() != network.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: network.input_dim(),
            actual: data.schema.dimension(),
        });
    }
    let scores = exec::map_collect(&data.instances, |instance| {
        network.score(&instance.features).expect("dimension checked")
    });
    Ok(scores)
}

/// Last-hidden-layer codes for every instance, in dataset order. All entries
/// are non-negative (rectifier outputs), computed with dropout disabled.
pub fn latent_codes(network: &TrainedNetwork, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    if data.schema.dimension() != network.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: network.input_dim(),
            actual: data.schema.dimension(),
        });
    }
    if network.layers.len() < 2 {
        return Err(Error::Config("network has no hidden layer".to_string()));
    }
    let codes = exec::map_collect(&data.instances, |instance| {
        network.latent(&instance.features).expect("dimension checked")
    });
    Ok(codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{
        EncodedInstance, FeatureSchema, FeatureScaler, LabelRule, Split,
    };
    use std::collections::BTreeMap;

    pub(crate) fn synthetic_schema(dim: usize) -> FeatureSchema {
        FeatureSchema {
            ngram_order: 2,
            ngram_vocabulary: vec![],
            numeric_features: (0..dim).map(|i| format!("f{i}")).collect(),
            categorical_features: vec![],
            scaler: (0..dim)
                .map(|_| FeatureScaler {
                    mean: 0.0,
                    stddev: 1.0,
                    constant: false,
                })
                .collect(),
            label_rule: LabelRule::new("attr", std::iter::empty::<String>()),
            positive_class_name: "pos".to_string(),
            negative_class_name: "neg".to_string(),
        }
    }

    pub(crate) fn dataset_from(rows: &[(Vec<f64>, u8)], split: Split) -> Dataset {
        let dim = rows[0].0.len();
        Dataset {
            schema: synthetic_schema(dim),
            instances: rows
                .iter()
                .enumerate()
                .map(|(i, (features, label))| EncodedInstance {
                    case_id: format!("case-{i}"),
                    prefix_length: 2,
                    features: features.clone(),
                    label: *label,
                    raw_view: BTreeMap::new(),
                })
                .collect(),
            split_tag: split,
        }
    }

    fn hand_net(layers: Vec<Layer>) -> TrainedNetwork {
        TrainedNetwork {
            layers,
            network_config: NetworkConfig::default(),
            training_config: TrainingConfig::default(),
            history: Vec::new(),
            epoch_selected: 0,
        }
    }

    #[test]
    fn init_respects_uniform_adaptive_bounds() {
        let config = NetworkConfig {
            hidden_layer_sizes: vec![2],
            seed: 11,
            ..NetworkConfig::default()
        };
        let net = init_network(4, &config).unwrap();
        // fan_in 4, fan_out 2 -> r = sqrt(6/6) = 1
        assert!(net.layers[0].weights.iter().all(|w| w.abs() <= 1.0));
        assert!(net.layers.iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let config = NetworkConfig {
            hidden_layer_sizes: vec![8, 3],
            seed: 99,
            ..NetworkConfig::default()
        };
        let a = init_network(5, &config).unwrap();
        let b = init_network(5, &config).unwrap();
        assert_eq!(a.layers, b.layers);
    }

    #[test]
    fn zero_output_layer_scores_half() {
        let net = hand_net(vec![
            Layer {
                inputs: 2,
                outputs: 2,
                weights: vec![1.0, 0.0, 0.0, 1.0],
                biases: vec![0.0, 0.0],
            },
            Layer {
                inputs: 2,
                outputs: 1,
                weights: vec![0.0, 0.0],
                biases: vec![0.0],
            },
        ]);
        for x in [[0.3, -0.7], [5.0, 2.0], [-1.0, -1.0]] {
            assert_eq!(net.score(&x).unwrap(), 0.5);
        }
    }

    #[test]
    fn identity_hidden_passes_non_negative_input() {
        let net = hand_net(vec![
            Layer {
                inputs: 2,
                outputs: 2,
                weights: vec![1.0, 0.0, 0.0, 1.0],
                biases: vec![0.0, 0.0],
            },
            Layer {
                inputs: 2,
                outputs: 1,
                weights: vec![0.0, 0.0],
                biases: vec![0.0],
            },
        ]);
        let pass = net.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(pass.hidden_activations[0], vec![1.0, 2.0]);
        assert_eq!(net.latent(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn hand_forward_pass_through_two_one_one() {
        // hidden: w = [1, -1], b = 0; input [3,1] -> pre-act 2 -> relu 2
        // output: w = 1, b = -2 -> sigmoid(0) = 0.5
        let net = hand_net(vec![
            Layer {
                inputs: 2,
                outputs: 1,
                weights: vec![1.0, -1.0],
                biases: vec![0.0],
            },
            Layer {
                inputs: 1,
                outputs: 1,
                weights: vec![1.0],
                biases: vec![-2.0],
            },
        ]);
        let pass = net.forward(&[3.0, 1.0]).unwrap();
        assert_eq!(pass.hidden_activations[0], vec![2.0]);
        assert_eq!(pass.score, 0.5);
        assert_eq!(net.latent(&[3.0, 1.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let net = init_network(3, &NetworkConfig::default()).unwrap();
        assert!(matches!(
            net.score(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn adadelta_first_step_matches_hand_arithmetic() {
        let mut state = AdadeltaState::new(1, 0.95, 1e-6);
        let mut params = vec![0.0];
        state.step(&mut params, &[1.0]);
        assert!((state.avg_sq_grad()[0] - 0.05).abs() < 1e-15);
        let expected = -(1e-6f64 / 0.050001).sqrt();
        assert!((params[0] - expected).abs() < 1e-12, "got {}", params[0]);
    }

    #[test]
    fn adadelta_zero_gradient_decays_accumulators() {
        let mut state = AdadeltaState::new(1, 0.9, 1e-8);
        let mut params = vec![1.0];
        state.step(&mut params, &[2.0]);
        let after_first = state.avg_sq_grad()[0];
        state.step(&mut params, &[0.0]);
        let p_before = params[0];
        assert_eq!(params[0], p_before);
        assert!(state.avg_sq_grad()[0] < after_first);
    }

    #[test]
    fn adadelta_is_odd_in_the_gradient() {
        let mut plus = AdadeltaState::new(1, 0.95, 1e-6);
        let mut minus = AdadeltaState::new(1, 0.95, 1e-6);
        let mut p_plus = vec![0.0];
        let mut p_minus = vec![0.0];
        plus.step(&mut p_plus, &[0.7]);
        minus.step(&mut p_minus, &[-0.7]);
        assert_eq!(p_plus[0], -p_minus[0]);
    }

    #[test]
    fn zero_epochs_returns_initialized_network() {
        let data = dataset_from(
            &[(vec![0.0, 0.0], 0), (vec![1.0, 1.0], 1)],
            Split::Train,
        );
        let valid = dataset_from(
            &[(vec![0.1, 0.1], 0), (vec![0.9, 0.9], 1)],
            Split::Validation,
        );
        let config = TrainingConfig {
            max_epochs: 0,
            ..TrainingConfig::default()
        };
        let net = train(&data, &valid, &NetworkConfig::default(), &config).unwrap();
        assert!(net.history.is_empty());
        assert_eq!(net.epoch_selected, 0);
        let fresh = init_network(2, &NetworkConfig::default()).unwrap();
        assert_eq!(net.layers, fresh.layers);
    }

    #[test]
    fn degenerate_training_labels_are_rejected() {
        let data = dataset_from(&[(vec![0.0], 1), (vec![1.0], 1)], Split::Train);
        let valid = dataset_from(&[(vec![0.0], 0), (vec![1.0], 1)], Split::Validation);
        let err = train(
            &data,
            &valid,
            &NetworkConfig::default(),
            &TrainingConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels(_)));
    }

    fn separable_rows(n: usize, offset: f64) -> Vec<(Vec<f64>, u8)> {
        (0..n)
            .map(|i| {
                let t = (i % 7) as f64 * 0.1 + offset;
                if i % 2 == 0 {
                    (vec![t, t + 0.2], 0)
                } else {
                    (vec![4.0 + t, 4.2 + t], 1)
                }
            })
            .collect()
    }

    #[test]
    fn separable_clusters_reach_perfect_auroc() {
        let train_set = dataset_from(&separable_rows(40, 0.0), Split::Train);
        let valid_set = dataset_from(&separable_rows(20, 0.03), Split::Validation);
        let net_config = NetworkConfig {
            hidden_layer_sizes: vec![8, 4],
            input_dropout_ratio: 0.0,
            hidden_dropout_ratio: 0.0,
            seed: 5,
        };
        let train_config = TrainingConfig {
            max_epochs: 500,
            stopping_rounds: 500,
            ..TrainingConfig::default()
        };
        let net = train(&train_set, &valid_set, &net_config, &train_config).unwrap();
        let best = net.history.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(best, 1.0, "history tail: {:?}", &net.history);
    }

    #[test]
    fn training_is_bit_deterministic_under_seed() {
        let train_set = dataset_from(&separable_rows(24, 0.0), Split::Train);
        let valid_set = dataset_from(&separable_rows(12, 0.05), Split::Validation);
        let net_config = NetworkConfig {
            hidden_layer_sizes: vec![6],
            seed: 123,
            ..NetworkConfig::default()
        };
        let train_config = TrainingConfig {
            max_epochs: 15,
            ..TrainingConfig::default()
        };
        let a = train(&train_set, &valid_set, &net_config, &train_config).unwrap();
        let b = train(&train_set, &valid_set, &net_config, &train_config).unwrap();
        assert_eq!(a.layers, b.layers);
        assert_eq!(a.history, b.history);
        assert_eq!(a.epoch_selected, b.epoch_selected);
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let config = NetworkConfig {
            hidden_layer_sizes: vec![4],
            input_dropout_ratio: 0.0,
            hidden_dropout_ratio: 0.0,
            seed: 3,
        };
        let mut net = init_network(3, &config).unwrap();
        // Nudge biases so no rectifier sits exactly at its kink.
        for i in 0..net.layers[0].biases.len() {
            net.layers[0].biases[i] = 0.17 + 0.05 * i as f64;
        }
        let features: Vec<Vec<f64>> = vec![
            vec![0.3, -0.8, 0.5],
            vec![-0.2, 0.4, 0.9],
            vec![0.7, 0.1, -0.3],
            vec![-0.5, -0.6, 0.2],
        ];
        let rows: Vec<&[f64]> = features.iter().map(|f| f.as_slice()).collect();
        let targets = vec![1.0, 0.0, 1.0, 0.0];

        let analytic = net.batch_gradients(&rows, &targets).unwrap();
        let h = 1e-5;
        for (group, grads) in analytic.iter().enumerate() {
            for (index, &g) in grads.iter().enumerate() {
                net.nudge_parameter(group, index, h);
                let plus = net.batch_loss(&rows, &targets).unwrap();
                net.nudge_parameter(group, index, -2.0 * h);
                let minus = net.batch_loss(&rows, &targets).unwrap();
                net.nudge_parameter(group, index, h);
                let numeric = (plus - minus) / (2.0 * h);
                let denom = g.abs().max(numeric.abs()).max(1e-8);
                let relative = (g - numeric).abs() / denom;
                assert!(
                    relative < 1e-4,
                    "group {group} index {index}: analytic {g} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let ratio = 0.3;
        let trials = 200_000;
        let mut sum = 0.0;
        for _ in 0..trials {
            let mask = dropout_mask(1, ratio, &mut rng);
            sum += mask[0] * 1.0;
        }
        let mean = sum / trials as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn predict_scores_zero_net_and_permutation_consistency() {
        let rows: Vec<(Vec<f64>, u8)> = (0..10)
            .map(|i| (vec![i as f64, (10 - i) as f64], (i % 2) as u8))
            .collect();
        let data = dataset_from(&rows, Split::Validation);
        let net = init_network(2, &NetworkConfig { hidden_layer_sizes: vec![3], seed: 1, ..NetworkConfig::default() }).unwrap();
        let scores = predict_scores(&net, &data).unwrap();

        let mut reversed_rows = rows.clone();
        reversed_rows.reverse();
        let reversed = dataset_from(&reversed_rows, Split::Validation);
        let reversed_scores = predict_scores(&net, &reversed).unwrap();
        let mut expected = scores.clone();
        expected.reverse();
        assert_eq!(reversed_scores, expected);
    }

    #[test]
    fn latent_codes_have_last_hidden_dimension_and_are_non_negative() {
        let data = dataset_from(&separable_rows(8, 0.0), Split::Validation);
        let config = NetworkConfig {
            hidden_layer_sizes: vec![5, 3],
            seed: 4,
            ..NetworkConfig::default()
        };
        let net = init_network(2, &config).unwrap();
        let codes = latent_codes(&net, &data).unwrap();
        assert_eq!(codes.len(), 8);
        assert!(codes.iter().all(|c| c.len() == 3));
        assert!(codes.iter().flatten().all(|&v| v >= 0.0));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn lock_free_mode_still_learns_separable_data() {
        let train_set = dataset_from(&separable_rows(40, 0.0), Split::Train);
        let valid_set = dataset_from(&separable_rows(20, 0.03), Split::Validation);
        let net_config = NetworkConfig {
            hidden_layer_sizes: vec![8, 4],
            input_dropout_ratio: 0.0,
            hidden_dropout_ratio: 0.0,
            seed: 5,
        };
        let train_config = TrainingConfig {
            max_epochs: 300,
            stopping_rounds: 300,
            lock_free_parallel: true,
            ..TrainingConfig::default()
        };
        let net = train(&train_set, &valid_set, &net_config, &train_config).unwrap();
        let best = net.history.iter().cloned().fold(f64::MIN, f64::max);
        assert!(best > 0.95, "best auroc {best}");
    }
}
