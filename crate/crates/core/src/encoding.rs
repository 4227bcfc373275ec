//! Prefix encoding: turns case prefixes into fixed-length numeric vectors
//! (n-gram transition counts, temporal features, one-hot categoricals) and
//! derives the binary target from a configurable case-level rule.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::event_log::{EventLog, Trace};
use crate::exec;
use crate::{Error, Result};

pub const DURATION_SINCE_START: &str = "duration_since_start_seconds";
pub const DURATION_SINCE_PREVIOUS: &str = "duration_since_previous_event_seconds";

/// Joins the activities of an n-gram transition key.
pub const NGRAM_JOINER: &str = "---";

/// Which prefixes of a trace become instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixPolicy {
    /// Shortest prefix length emitted (default 2).
    pub min_length: usize,
    /// Emit only the full trace as a single instance.
    pub full_trace_only: bool,
}

impl Default for PrefixPolicy {
    fn default() -> Self {
        PrefixPolicy {
            min_length: 2,
            full_trace_only: false,
        }
    }
}

/// Case-level labeling predicate: a case is push-to-front when any of its
/// events carries `attribute` with a text value in `values`. The positive
/// class of the downstream classifier is the complement ("regular flow").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub attribute: String,
    pub values: BTreeSet<String>,
}

impl LabelRule {
    pub fn new(attribute: impl Into<String>, values: impl IntoIterator<Item = String>) -> Self {
        LabelRule {
            attribute: attribute.into(),
            values: values.into_iter().collect(),
        }
    }
}

/// Encoding configuration, normally taken from the pipeline config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub ngram_order: usize,
    pub categorical_attributes: Vec<String>,
    pub prefix_policy: PrefixPolicy,
    pub label_rule: LabelRule,
    pub positive_class_name: String,
    pub negative_class_name: String,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            ngram_order: 2,
            categorical_attributes: vec!["impact".to_string()],
            prefix_policy: PrefixPolicy::default(),
            label_rule: LabelRule::new(
                "support_line",
                ["2nd".to_string(), "3rd".to_string()],
            ),
            positive_class_name: "Regular".to_string(),
            negative_class_name: "Push-to-Front".to_string(),
        }
    }
}

/// Per-numeric-feature standardization parameters, fit on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: f64,
    pub stddev: f64,
    /// Feature was constant on the training data; scaled value is forced to 0.
    pub constant: bool,
}

impl FeatureScaler {
    pub fn scale(&self, raw: f64) -> f64 {
        if self.constant {
            0.0
        } else {
            (raw - self.mean) / self.stddev
        }
    }

    pub fn unscale(&self, scaled: f64) -> f64 {
        if self.constant {
            self.mean
        } else {
            scaled * self.stddev + self.mean
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    /// Observed training levels, lexicographically ordered.
    pub levels: Vec<String>,
}

/// Fixed feature layout shared by every encoded instance:
/// `[transition counts | numeric features | one-hot blocks]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub ngram_order: usize,
    pub ngram_vocabulary: Vec<String>,
    pub numeric_features: Vec<String>,
    pub categorical_features: Vec<CategoricalFeature>,
    pub scaler: Vec<FeatureScaler>,
    pub label_rule: LabelRule,
    pub positive_class_name: String,
    pub negative_class_name: String,
}

/// What a feature index means inside the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind<'a> {
    TransitionCount(&'a str),
    Numeric { name: &'a str, scaler: &'a FeatureScaler },
    OneHot { attribute: &'a str, level: &'a str },
}

impl FeatureSchema {
    pub fn dimension(&self) -> usize {
        self.ngram_vocabulary.len()
            + self.numeric_features.len()
            + self
                .categorical_features
                .iter()
                .map(|c| c.levels.len())
                .sum::<usize>()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = self.ngram_vocabulary.clone();
        names.extend(self.numeric_features.iter().cloned());
        for cat in &self.categorical_features {
            for level in &cat.levels {
                names.push(format!("{}={}", cat.name, level));
            }
        }
        names
    }

    pub fn feature_kind(&self, index: usize) -> Option<FeatureKind<'_>> {
        let vocab = self.ngram_vocabulary.len();
        if index < vocab {
            return Some(FeatureKind::TransitionCount(&self.ngram_vocabulary[index]));
        }
        let mut offset = index - vocab;
        if offset < self.numeric_features.len() {
            return Some(FeatureKind::Numeric {
                name: &self.numeric_features[offset],
                scaler: &self.scaler[offset],
            });
        }
        offset -= self.numeric_features.len();
        for cat in &self.categorical_features {
            if offset < cat.levels.len() {
                return Some(FeatureKind::OneHot {
                    attribute: &cat.name,
                    level: &cat.levels[offset],
                });
            }
            offset -= cat.levels.len();
        }
        None
    }

    pub fn class_name(&self, positive: bool) -> &str {
        if positive {
            &self.positive_class_name
        } else {
            &self.negative_class_name
        }
    }
}

/// A view of the first `length` events of a trace.
#[derive(Debug, Clone, Copy)]
pub struct Prefix<'a> {
    pub trace: &'a Trace,
    pub length: usize,
}

impl<'a> Prefix<'a> {
    pub fn events(&self) -> &'a [crate::event_log::Event] {
        &self.trace.events[..self.length]
    }
}

/// Enumerates the prefixes of a trace under the policy. A trace shorter than
/// `min_length` yields no prefixes.
pub fn generate_prefixes<'a>(trace: &'a Trace, policy: &PrefixPolicy) -> Vec<Prefix<'a>> {
    let n = trace.len();
    if n < policy.min_length.max(1) {
        return Vec::new();
    }
    if policy.full_trace_only {
        return vec![Prefix { trace, length: n }];
    }
    (policy.min_length.max(1)..=n)
        .map(|length| Prefix { trace, length })
        .collect()
}

/// Evaluates the push-to-front predicate for a case.
///
/// An empty value set is vacuously false. Otherwise the rule's attribute must
/// appear on at least one event of the trace, else the rule is unevaluable.
pub fn label_case(trace: &Trace, rule: &LabelRule) -> Result<bool> {
    if rule.values.is_empty() {
        return Ok(false);
    }
    let mut attribute_seen = false;
    let mut matched = false;
    for event in &trace.events {
        if let Some(value) = event.attributes.get(&rule.attribute) {
            attribute_seen = true;
            if rule.values.contains(&value.render()) {
                matched = true;
            }
        }
    }
    if !attribute_seen {
        return Err(Error::InvalidInput(format!(
            "label rule references attribute {:?} absent from all events of case {}",
            rule.attribute, trace.case_id
        )));
    }
    Ok(matched)
}

fn transition_keys(events: &[crate::event_log::Event], order: usize) -> Vec<String> {
    if events.len() < order {
        return Vec::new();
    }
    events
        .windows(order)
        .map(|w| {
            w.iter()
                .map(|e| e.activity.as_str())
                .collect::<Vec<_>>()
                .join(NGRAM_JOINER)
        })
        .collect()
}

/// Resolves the categorical value of a prefix: last event's attributes first,
/// then case attributes, else the explicit "missing" level.
fn categorical_value(prefix: &Prefix<'_>, attribute: &str) -> String {
    let last = prefix.events().last().expect("prefix is non-empty");
    if let Some(v) = last.attributes.get(attribute) {
        return v.render();
    }
    if let Some(v) = prefix.trace.case_attributes.get(attribute) {
        return v.render();
    }
    "missing".to_string()
}

fn duration_features(prefix: &Prefix<'_>) -> (f64, f64) {
    let events = prefix.events();
    let first = events.first().expect("prefix is non-empty");
    let last = events.last().expect("prefix is non-empty");
    let since_start = (last.timestamp - first.timestamp)
        .num_milliseconds() as f64
        / 1000.0;
    let since_previous = if events.len() >= 2 {
        (last.timestamp - events[events.len() - 2].timestamp).num_milliseconds() as f64 / 1000.0
    } else {
        0.0
    };
    (since_start, since_previous)
}

/// Builds the feature schema from the training portion of a log.
///
/// Vocabulary and categorical levels are collected from the traces whose case
/// id is in `training_cases`; the numeric scaler is fit on the training
/// prefix instances only. Ordering is lexicographic throughout, so the schema
/// is deterministic.
pub fn build_feature_schema(
    log: &EventLog,
    config: &EncodingConfig,
    training_cases: &BTreeSet<String>,
) -> Result<FeatureSchema> {
    if config.ngram_order < 2 {
        return Err(Error::Config("ngram_order must be >= 2".to_string()));
    }
    let training: Vec<&Trace> = log
        .traces
        .iter()
        .filter(|t| training_cases.contains(&t.case_id))
        .collect();
    if training.is_empty() {
        return Err(Error::InvalidInput(
            "empty training portion: no traces match the training case ids".to_string(),
        ));
    }

    let mut vocabulary: BTreeSet<String> = BTreeSet::new();
    for trace in &training {
        vocabulary.extend(transition_keys(&trace.events, config.ngram_order));
    }

    // Categorical levels, with a presence check across the whole log.
    let mut levels: Vec<BTreeSet<String>> = vec![BTreeSet::new(); config.categorical_attributes.len()];
    for (i, attribute) in config.categorical_attributes.iter().enumerate() {
        let present_anywhere = log.traces.iter().any(|t| {
            t.case_attributes.contains_key(attribute)
                || t.events.iter().any(|e| e.attributes.contains_key(attribute))
        });
        if !present_anywhere {
            return Err(Error::Config(format!(
                "categorical attribute {attribute:?} is absent from every trace"
            )));
        }
        for trace in &training {
            for prefix in generate_prefixes(trace, &config.prefix_policy) {
                levels[i].insert(categorical_value(&prefix, attribute));
            }
        }
    }

    // Fit the numeric scaler on training prefixes.
    let mut sums = vec![0.0f64; 2];
    let mut sq_sums = vec![0.0f64; 2];
    let mut count = 0usize;
    for trace in &training {
        for prefix in generate_prefixes(trace, &config.prefix_policy) {
            let (start, prev) = duration_features(&prefix);
            sums[0] += start;
            sums[1] += prev;
            sq_sums[0] += start * start;
            sq_sums[1] += prev * prev;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput(
            "empty training portion: no prefixes under the prefix policy".to_string(),
        ));
    }
    let scaler = (0..2)
        .map(|i| {
            let mean = sums[i] / count as f64;
            let variance = (sq_sums[i] / count as f64 - mean * mean).max(0.0);
            let stddev = variance.sqrt();
            let constant = stddev < 1e-12;
            FeatureScaler {
                mean,
                stddev: if constant { 0.0 } else { stddev },
                constant,
            }
        })
        .collect();

    Ok(FeatureSchema {
        ngram_order: config.ngram_order,
        ngram_vocabulary: vocabulary.into_iter().collect(),
        numeric_features: vec![
            DURATION_SINCE_START.to_string(),
            DURATION_SINCE_PREVIOUS.to_string(),
        ],
        categorical_features: config
            .categorical_attributes
            .iter()
            .zip(levels)
            .map(|(name, set)| CategoricalFeature {
                name: name.clone(),
                levels: set.into_iter().collect(),
            })
            .collect(),
        scaler,
        label_rule: config.label_rule.clone(),
        positive_class_name: config.positive_class_name.clone(),
        negative_class_name: config.negative_class_name.clone(),
    })
}

/// Pre-scaling value of a feature, kept for explanation display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Num(f64),
    Cat(String),
}

/// One encoded case prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedInstance {
    pub case_id: String,
    pub prefix_length: usize,
    pub features: Vec<f64>,
    /// 1 = positive class (regular flow), 0 = negative (push-to-front).
    pub label: u8,
    /// Raw (unscaled) values: both durations, each categorical, and the
    /// non-zero transition counts.
    pub raw_view: BTreeMap<String, RawValue>,
}

/// Reusable encoder holding the schema's vocabulary index.
pub struct InstanceEncoder<'a> {
    schema: &'a FeatureSchema,
    vocab_index: HashMap<&'a str, usize>,
}

impl<'a> InstanceEncoder<'a> {
    pub fn new(schema: &'a FeatureSchema) -> Self {
        let vocab_index = schema
            .ngram_vocabulary
            .iter()
            .enumerate()
            .map(|(i, key)| (key.as_str(), i))
            .collect();
        InstanceEncoder { schema, vocab_index }
    }

    /// Encodes one prefix. Total over all valid prefixes: unknown transitions
    /// and unseen categorical levels map to zeros, never to errors.
    pub fn encode(&self, prefix: &Prefix<'_>, label: u8) -> EncodedInstance {
        let schema = self.schema;
        let mut features = vec![0.0f64; schema.dimension()];
        let mut raw_view = BTreeMap::new();

        for key in transition_keys(prefix.events(), schema.ngram_order) {
            if let Some(&i) = self.vocab_index.get(key.as_str()) {
                features[i] += 1.0;
            }
        }
        for (i, key) in schema.ngram_vocabulary.iter().enumerate() {
            if features[i] != 0.0 {
                raw_view.insert(key.clone(), RawValue::Num(features[i]));
            }
        }

        let (since_start, since_previous) = duration_features(prefix);
        let base = schema.ngram_vocabulary.len();
        features[base] = schema.scaler[0].scale(since_start);
        features[base + 1] = schema.scaler[1].scale(since_previous);
        raw_view.insert(DURATION_SINCE_START.to_string(), RawValue::Num(since_start));
        raw_view.insert(
            DURATION_SINCE_PREVIOUS.to_string(),
            RawValue::Num(since_previous),
        );

        let mut offset = base + schema.numeric_features.len();
        for cat in &schema.categorical_features {
            let value = categorical_value(prefix, &cat.name);
            if let Ok(pos) = cat.levels.binary_search(&value) {
                features[offset + pos] = 1.0;
            }
            raw_view.insert(cat.name.clone(), RawValue::Cat(value));
            offset += cat.levels.len();
        }

        EncodedInstance {
            case_id: prefix.trace.case_id.clone(),
            prefix_length: prefix.length,
            features,
            label,
            raw_view,
        }
    }
}

/// Convenience single-shot encoding (label 0); prefer [`InstanceEncoder`]
/// when encoding many prefixes.
pub fn encode_prefix(prefix: &Prefix<'_>, schema: &FeatureSchema) -> EncodedInstance {
    InstanceEncoder::new(schema).encode(prefix, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
}

/// An encoded dataset: a schema plus instances of that schema.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub instances: Vec<EncodedInstance>,
    pub split_tag: Split,
}

impl Dataset {
    pub fn labels(&self) -> Vec<u8> {
        self.instances.iter().map(|i| i.label).collect()
    }

    pub fn feature_rows(&self) -> Vec<&[f64]> {
        self.instances.iter().map(|i| i.features.as_slice()).collect()
    }
}

/// Encodes every prefix of the given cases. Labeling is per case; encoding of
/// instances is an order-preserving parallel map.
pub fn encode_cases(
    log: &EventLog,
    schema: &FeatureSchema,
    policy: &PrefixPolicy,
    cases: &BTreeSet<String>,
    split_tag: Split,
) -> Result<Dataset> {
    let encoder = InstanceEncoder::new(schema);
    let mut jobs: Vec<(Prefix<'_>, u8)> = Vec::new();
    for trace in log.traces.iter().filter(|t| cases.contains(&t.case_id)) {
        let push_to_front = label_case(trace, &schema.label_rule)?;
        let label = u8::from(!push_to_front);
        for prefix in generate_prefixes(trace, policy) {
            jobs.push((prefix, label));
        }
    }
    let instances = exec::map_collect(&jobs, |(prefix, label)| encoder.encode(prefix, *label));
    Ok(Dataset {
        schema: schema.clone(),
        instances,
        split_tag,
    })
}

/// Deterministically partitions case ids into train/validation sets.
/// Sizes are within one case of the requested ratio and both sides are
/// non-empty.
pub fn split_case_ids(
    case_ids: &BTreeSet<String>,
    ratio: f64,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} not in (0,1)")));
    }
    let n = case_ids.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "cannot split {n} case(s) into two non-empty sets"
        )));
    }
    let mut ids: Vec<&String> = case_ids.iter().collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let train_count = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
    let train: BTreeSet<String> = ids[..train_count].iter().map(|s| (*s).clone()).collect();
    let validation: BTreeSet<String> = ids[train_count..].iter().map(|s| (*s).clone()).collect();
    Ok((train, validation))
}

/// Splits encoded instances by case id (all prefixes of a case land on the
/// same side), deterministically under the seed.
pub fn split_dataset(
    schema: &FeatureSchema,
    instances: Vec<EncodedInstance>,
    ratio: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let case_ids: BTreeSet<String> = instances.iter().map(|i| i.case_id.clone()).collect();
    let (train_ids, _) = split_case_ids(&case_ids, ratio, seed)?;
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for instance in instances {
        if train_ids.contains(&instance.case_id) {
            train.push(instance);
        } else {
            validation.push(instance);
        }
    }
    Ok((
        Dataset {
            schema: schema.clone(),
            instances: train,
            split_tag: Split::Train,
        },
        Dataset {
            schema: schema.clone(),
            instances: validation,
            split_tag: Split::Validation,
        },
    ))
}

/// Writes a dataset as CSV: header is the feature names plus `label`, one row
/// per instance.
pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let mut out = String::new();
    let names = dataset.schema.feature_names();
    out.push_str(&names.join(","));
    out.push_str(",label\n");
    for instance in &dataset.instances {
        let mut row: Vec<String> = instance.features.iter().map(|v| format!("{v}")).collect();
        row.push(format!("{}", instance.label));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
