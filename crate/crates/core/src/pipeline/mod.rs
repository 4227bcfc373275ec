//! End-to-end orchestration: parse, encode, split, train, pick the operating
//! threshold, identify local regions on the latent codes, fit per-cluster
//! surrogates, and assemble everything into a reloadable model bundle that
//! answers per-instance explanation queries.

mod bundle;
mod config;
mod report;

pub use bundle::{load_bundle, save_bundle, ModelBundle, ValidationData, BUNDLE_VERSION};
pub use config::{
    load_config, EncodingSection, IngestionConfig, NetworkSection, PipelineConfig, RegionsSection,
    ReportSection, SurrogateSection, TrainingSection,
};
pub use report::write_report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoding::{
    self, build_feature_schema, encode_cases, split_case_ids, Split,
};
use crate::event_log::{validate_log, EventLog};
use crate::exec::derive_seed;
use crate::local_regions::{self, per_cluster_accuracy, KSelectionTrace, RegionModel};
use crate::metrics::{self, ClassificationMeasures, ClusterSS, ConfusionMatrix, RocCurve};
use crate::neural_net;
use crate::surrogate::{self, decision_path, extract_rule, Rule, SurrogateTree};
use crate::{Error, Result};

// Stable stream tags for deriving per-stage seeds from the config seed.
const STREAM_SPLIT: u64 = 101;
const STREAM_NETWORK: u64 = 102;
const STREAM_REGIONS: u64 = 103;
const STREAM_BASELINE: u64 = 104;

/// Static framing metadata echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationManifest {
    pub subject: String,
    pub objective: String,
    pub scope: String,
    pub generation_time: String,
}

impl Default for ExplanationManifest {
    fn default() -> Self {
        ExplanationManifest {
            subject: "domain expert".to_string(),
            objective: "justification of individual model decisions".to_string(),
            scope: "local post-hoc".to_string(),
            generation_time: "post-model".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceCounts {
    pub cases: usize,
    pub train_cases: usize,
    pub validation_cases: usize,
    pub train_instances: usize,
    pub validation_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReportRow {
    pub cluster: usize,
    pub size: usize,
    pub local_accuracy: f64,
    pub r2: Option<f64>,
    pub r2_flag: Option<String>,
}

/// Clustering plus surrogate quality in one representation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceEvaluation {
    pub selected_k: usize,
    pub cluster_ss: ClusterSS,
    pub per_cluster: Vec<ClusterReportRow>,
    /// Mean fidelity over clusters with an unflagged R².
    pub mean_r2: Option<f64>,
    /// Mean over every cluster with a defined R², flagged ones included.
    pub mean_r2_all_defined: Option<f64>,
    pub flagged_clusters: usize,
    pub k_selection: KSelectionTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub counts: InstanceCounts,
    pub auroc: f64,
    pub roc: RocCurve,
    pub tau: f64,
    pub confusion: ConfusionMatrix,
    pub measures: ClassificationMeasures,
    pub epochs_run: usize,
    pub epoch_selected: usize,
    pub latent: SpaceEvaluation,
    pub baseline: Option<SpaceEvaluation>,
    pub manifest: ExplanationManifest,
}

/// Loads the configured event log from disk.
pub fn load_log(config: &PipelineConfig) -> Result<EventLog> {
    let bytes = std::fs::read(&config.ingestion.file)?;
    let mut log = match config.ingestion.resolve_format()? {
        crate::event_log::LogFormat::Xes => {
            crate::event_log::parse_xes(&bytes, &config.ingestion.xes_options())?
        }
        crate::event_log::LogFormat::Csv => {
            crate::event_log::parse_csv(&bytes, &config.ingestion.csv_options())?
        }
    };
    log.source.name = config.ingestion.file.display().to_string();
    Ok(log)
}

fn space_evaluation(
    regions: &RegionModel,
    surrogates: &BTreeMap<usize, SurrogateTree>,
    k_selection: &KSelectionTrace,
    scores: &[f64],
    labels: &[u8],
    tau: f64,
) -> SpaceEvaluation {
    let accuracies = per_cluster_accuracy(&regions.assignments, regions.k, scores, labels, tau);
    let mut sizes = vec![0usize; regions.k];
    for &a in &regions.assignments {
        sizes[a] += 1;
    }
    let per_cluster: Vec<ClusterReportRow> = (0..regions.k)
        .map(|cluster| {
            let tree = &surrogates[&cluster];
            ClusterReportRow {
                cluster,
                size: sizes[cluster],
                local_accuracy: accuracies[cluster],
                r2: tree.r2,
                r2_flag: tree.r2_flag.clone(),
            }
        })
        .collect();

    let unflagged: Vec<f64> = per_cluster
        .iter()
        .filter(|row| row.r2_flag.is_none())
        .filter_map(|row| row.r2)
        .collect();
    let defined: Vec<f64> = per_cluster.iter().filter_map(|row| row.r2).collect();
    let mean = |values: &[f64]| {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };

    SpaceEvaluation {
        selected_k: regions.k,
        cluster_ss: regions.fit_summary.clone(),
        flagged_clusters: per_cluster.iter().filter(|r| r.r2_flag.is_some()).count(),
        mean_r2: mean(&unflagged),
        mean_r2_all_defined: mean(&defined),
        per_cluster,
        k_selection: k_selection.clone(),
    }
}

/// Runs the full training pipeline on an already-parsed log.
pub fn run_train_on_log(config: &PipelineConfig, mut log: EventLog) -> Result<ModelBundle> {
    let stage = |name: &'static str| move |e: Error| e.in_stage(name);

    let validation_report = validate_log(&mut log);
    log::info!(
        "ingestion: {} traces, {} events, {} order repairs",
        validation_report.traces,
        validation_report.events,
        validation_report.monotonicity_repairs
    );

    // Split by case, then fit the schema on the training portion only.
    let encoding_config = config.encoding_config();
    let policy = &encoding_config.prefix_policy;
    let eligible: std::collections::BTreeSet<String> = log
        .traces
        .iter()
        .filter(|t| t.len() >= policy.min_length)
        .map(|t| t.case_id.clone())
        .collect();
    let (train_ids, validation_ids) =
        split_case_ids(&eligible, config.encoding.split_ratio, derive_seed(config.seed, STREAM_SPLIT))
            .map_err(stage("split"))?;
    let schema =
        build_feature_schema(&log, &encoding_config, &train_ids).map_err(stage("schema"))?;
    let train_set =
        encode_cases(&log, &schema, policy, &train_ids, Split::Train).map_err(stage("encoding"))?;
    let validation_set = encode_cases(&log, &schema, policy, &validation_ids, Split::Validation)
        .map_err(stage("encoding"))?;
    log::info!(
        "encoding: dimension {}, {} train / {} validation instances",
        schema.dimension(),
        train_set.instances.len(),
        validation_set.instances.len()
    );

    // Black-box training.
    let mut net_config = config.network_config();
    net_config.seed = derive_seed(config.seed, STREAM_NETWORK);
    let training_config = config.training_config();
    let network = neural_net::train(&train_set, &validation_set, &net_config, &training_config)
        .map_err(stage("training"))?;
    log::info!(
        "training: {} epochs, best epoch {} (AUROC {:.4})",
        network.history.len(),
        network.epoch_selected,
        network.history.iter().cloned().fold(f64::NAN, f64::max)
    );

    // Operating point.
    let scores = neural_net::predict_scores(&network, &validation_set).map_err(stage("scoring"))?;
    let labels = validation_set.labels();
    let roc = metrics::roc_and_auroc(&scores, &labels).map_err(stage("evaluation"))?;
    let (tau, confusion) =
        metrics::select_equal_error_threshold(&scores, &labels).map_err(stage("threshold"))?;
    log::info!("threshold: tau {tau:.4}, AUROC {:.4}", roc.auroc);

    // Local regions on the latent codes.
    let latent = neural_net::latent_codes(&network, &validation_set).map_err(stage("latent"))?;
    let k_range = config.regions.k_min..=config.regions.k_max;
    let (regions, k_selection) = local_regions::select_k(
        &latent,
        &scores,
        &labels,
        tau,
        k_range.clone(),
        derive_seed(config.seed, STREAM_REGIONS),
        config.regions.restarts,
        config.regions.instance_weighted_accuracy,
    )
    .map_err(stage("regions"))?;
    log::info!(
        "regions: k {} selected, explained variance {:.4}",
        regions.k,
        regions.fit_summary.explained_variance
    );

    // Surrogates per cluster.
    let rows = validation_set.feature_rows();
    let tree_config = config.surrogate_config();
    let surrogates =
        surrogate::fit_cluster_surrogates(&regions, &rows, &scores, &labels, &tree_config, tau)
            .map_err(stage("surrogates"))?;

    // Original-space baseline (K-LIME style) for comparison.
    let (baseline_regions, baseline_selection, baseline_surrogates) = if config.regions.fit_baseline
    {
        let feature_vectors: Vec<Vec<f64>> = validation_set
            .instances
            .iter()
            .map(|i| i.features.clone())
            .collect();
        let (model, selection) = local_regions::baseline_regions(
            &feature_vectors,
            &scores,
            &labels,
            tau,
            k_range,
            derive_seed(config.seed, STREAM_BASELINE),
            config.regions.restarts,
            config.regions.instance_weighted_accuracy,
        )
        .map_err(stage("baseline-regions"))?;
        let trees =
            surrogate::fit_cluster_surrogates(&model, &rows, &scores, &labels, &tree_config, tau)
                .map_err(stage("baseline-surrogates"))?;
        (Some(model), Some(selection), trees)
    } else {
        (None, None, BTreeMap::new())
    };

    let latent_evaluation =
        space_evaluation(&regions, &surrogates, &k_selection, &scores, &labels, tau);
    let baseline_evaluation = match (&baseline_regions, &baseline_selection) {
        (Some(model), Some(selection)) => Some(space_evaluation(
            model,
            &baseline_surrogates,
            selection,
            &scores,
            &labels,
            tau,
        )),
        _ => None,
    };

    let evaluation = EvaluationSummary {
        counts: InstanceCounts {
            cases: eligible.len(),
            train_cases: train_ids.len(),
            validation_cases: validation_ids.len(),
            train_instances: train_set.instances.len(),
            validation_instances: validation_set.instances.len(),
        },
        auroc: roc.auroc,
        roc,
        tau,
        confusion,
        measures: metrics::classification_measures(&confusion),
        epochs_run: network.history.len(),
        epoch_selected: network.epoch_selected,
        latent: latent_evaluation,
        baseline: baseline_evaluation,
        manifest: ExplanationManifest::default(),
    };

    Ok(ModelBundle {
        config: config.clone(),
        schema,
        network,
        tau,
        regions,
        baseline_regions,
        surrogates,
        baseline_surrogates,
        validation: ValidationData {
            instances: validation_set.instances,
            scores,
            latent,
        },
        evaluation,
    })
}

/// Parses the configured log and runs [`run_train_on_log`].
pub fn run_train(config: &PipelineConfig) -> Result<ModelBundle> {
    let log = load_log(config).map_err(|e| e.in_stage("ingestion"))?;
    run_train_on_log(config, log)
}

/// The evaluation report is the bundle's stored summary; regenerating it from
/// a reloaded bundle yields identical content.
pub fn run_evaluate(bundle: &ModelBundle) -> EvaluationSummary {
    bundle.evaluation.clone()
}

/// The Fig.-5-style per-instance explanation bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub cluster_number: usize,
    pub case_id: String,
    pub prefix_length: usize,
    pub r2_of_local_surrogate: Option<f64>,
    /// Present when the cluster's fidelity is flagged (degenerate or
    /// single-leaf surrogate).
    pub fidelity_warning: Option<String>,
    pub deep_learning_prediction: f64,
    pub surrogate_tree_prediction: f64,
    pub predicted_label: String,
    pub ground_truth_label: String,
    /// Branch directions from the root ("Left", "Right", ...).
    pub decision_path: Vec<String>,
    pub rule: Rule,
    pub rule_text: String,
    pub tau: f64,
}

impl ExplanationRecord {
    /// Plain-text rendering of the record.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str("Supplementary Explanation Information\n");
        out.push_str(&format!("Cluster number: {}\n", self.cluster_number));
        out.push_str(&format!(
            "Instance: case {} prefix {}\n",
            self.case_id, self.prefix_length
        ));
        match self.r2_of_local_surrogate {
            Some(r2) => out.push_str(&format!(
                "R^2 of the local surrogate in this cluster: {}\n",
                surrogate::format_signif(r2, 4)
            )),
            None => out.push_str("R^2 of the local surrogate in this cluster: undefined\n"),
        }
        if let Some(warning) = &self.fidelity_warning {
            out.push_str(&format!("Fidelity warning: {warning}\n"));
        }
        out.push_str(&format!(
            "Deep learning prediction: {}\n",
            surrogate::format_signif(self.deep_learning_prediction, 4)
        ));
        out.push_str(&format!(
            "Surrogate tree prediction: {}\n",
            surrogate::format_signif(self.surrogate_tree_prediction, 4)
        ));
        out.push_str(&format!("Prediction: {}\n", self.predicted_label));
        out.push_str(&format!("Ground truth label: {}\n", self.ground_truth_label));
        out.push_str(&format!("Threshold: {}\n", self.tau));
        out.push_str(&format!(
            "Decision path: {}\n",
            self.decision_path.join("-")
        ));
        out.push_str(&format!(
            "Rule (confidence {}, support {}):\n{}\n",
            surrogate::format_signif(self.rule.confidence, 4),
            self.rule.support,
            self.rule_text
        ));
        out
    }
}

/// Explains one validation instance, addressed by case id and prefix length.
pub fn run_explain(
    bundle: &ModelBundle,
    case_id: &str,
    prefix_length: usize,
) -> Result<ExplanationRecord> {
    let index = bundle
        .validation
        .instances
        .iter()
        .position(|i| i.case_id == case_id && i.prefix_length == prefix_length)
        .ok_or_else(|| Error::NotInValidationSet {
            case_id: case_id.to_string(),
            prefix_length,
        })?;

    let cluster = bundle.regions.assignments[index];
    let tree = bundle
        .surrogates
        .get(&cluster)
        .ok_or(Error::UnknownCluster(cluster))?;
    let instance = &bundle.validation.instances[index];
    let path = decision_path(tree, &instance.features);
    let rule = extract_rule(&path, &bundle.schema);
    let score = bundle.validation.scores[index];

    Ok(ExplanationRecord {
        cluster_number: cluster,
        case_id: instance.case_id.clone(),
        prefix_length: instance.prefix_length,
        r2_of_local_surrogate: tree.r2,
        fidelity_warning: tree.r2_flag.clone(),
        deep_learning_prediction: score,
        surrogate_tree_prediction: path.leaf_prediction,
        predicted_label: bundle.schema.class_name(score >= bundle.tau).to_string(),
        ground_truth_label: bundle.schema.class_name(instance.label == 1).to_string(),
        decision_path: path.directions(),
        rule_text: rule.text(),
        rule,
        tau: bundle.tau,
    })
}

/// DOT rendering of one cluster's surrogate tree.
pub fn export_tree_dot(bundle: &ModelBundle, cluster: usize) -> Result<String> {
    let tree = bundle
        .surrogates
        .get(&cluster)
        .ok_or(Error::UnknownCluster(cluster))?;
    Ok(tree.to_dot(&bundle.schema))
}

/// Runs ingestion + encoding only and renders the encoded dataset as CSV
/// (train instances first, then validation).
pub fn run_encode(config: &PipelineConfig) -> Result<String> {
    let mut log = load_log(config).map_err(|e| e.in_stage("ingestion"))?;
    validate_log(&mut log);
    let encoding_config = config.encoding_config();
    let policy = &encoding_config.prefix_policy;
    let eligible: std::collections::BTreeSet<String> = log
        .traces
        .iter()
        .filter(|t| t.len() >= policy.min_length)
        .map(|t| t.case_id.clone())
        .collect();
    let (train_ids, validation_ids) = split_case_ids(
        &eligible,
        config.encoding.split_ratio,
        derive_seed(config.seed, STREAM_SPLIT),
    )?;
    let schema = build_feature_schema(&log, &encoding_config, &train_ids)?;
    let mut dataset = encode_cases(&log, &schema, policy, &train_ids, Split::Train)?;
    let validation = encode_cases(&log, &schema, policy, &validation_ids, Split::Validation)?;
    dataset.instances.extend(validation.instances);
    Ok(encoding::dataset_to_csv(&dataset))
}
