//! Pipeline configuration: one TOML document covering ingestion, encoding,
//! network, training, regions, surrogate and report options. Every field has
//! a default, so a minimal config only names the input file. The seed can be
//! overridden through the `XPPM_SEED` environment variable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoding::{EncodingConfig, LabelRule, PrefixPolicy};
use crate::event_log::{CsvOptions, LabelScheme, LogFormat, XesOptions};
use crate::neural_net::{NetworkConfig, TrainingConfig};
use crate::surrogate::TreeConfig;
use crate::{Error, Result};

pub const SEED_ENV_VAR: &str = "XPPM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XesBindings {
    pub activity_key: String,
    pub activity_secondary_key: Option<String>,
    pub timestamp_key: String,
    pub trace_id_key: String,
}

impl Default for XesBindings {
    fn default() -> Self {
        XesBindings {
            activity_key: "concept:name".to_string(),
            activity_secondary_key: Some("lifecycle:transition".to_string()),
            timestamp_key: "time:timestamp".to_string(),
            trace_id_key: "concept:name".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvBindings {
    pub case_column: String,
    pub activity_column: String,
    pub activity_secondary_column: Option<String>,
    pub timestamp_column: String,
}

impl Default for CsvBindings {
    fn default() -> Self {
        CsvBindings {
            case_column: "case".to_string(),
            activity_column: "activity".to_string(),
            activity_secondary_column: None,
            timestamp_column: "timestamp".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelRuleSection {
    pub attribute: String,
    pub values: Vec<String>,
}

impl Default for LabelRuleSection {
    fn default() -> Self {
        LabelRuleSection {
            attribute: "support_line".to_string(),
            values: vec!["2nd".to_string(), "3rd".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestionConfig {
    pub file: PathBuf,
    /// "xes" or "csv"; inferred from the file extension when omitted.
    pub format: Option<String>,
    /// Separator between the primary and secondary activity parts.
    pub label_separator: String,
    /// Replace whitespace inside label parts with '.'.
    pub dot_whitespace: bool,
    pub xes: XesBindings,
    pub csv: CsvBindings,
    pub label_rule: LabelRuleSection,
}

impl Default for IngestionConfig {
    fn default() -> Self {
        IngestionConfig {
            file: PathBuf::new(),
            format: None,
            label_separator: "-".to_string(),
            dot_whitespace: true,
            xes: XesBindings::default(),
            csv: CsvBindings::default(),
            label_rule: LabelRuleSection::default(),
        }
    }
}

impl IngestionConfig {
    pub fn resolve_format(&self) -> Result<LogFormat> {
        if let Some(name) = &self.format {
            return match name.to_ascii_lowercase().as_str() {
                "xes" => Ok(LogFormat::Xes),
                "csv" => Ok(LogFormat::Csv),
                other => Err(Error::Config(format!("unknown log format {other:?}"))),
            };
        }
        match self
            .file
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("xes") => Ok(LogFormat::Xes),
            Some("csv") => Ok(LogFormat::Csv),
            _ => Err(Error::Config(format!(
                "cannot infer log format from {:?}; set ingestion.format",
                self.file
            ))),
        }
    }

    pub fn xes_options(&self) -> XesOptions {
        XesOptions {
            label: LabelScheme {
                primary: self.xes.activity_key.clone(),
                secondary: self.xes.activity_secondary_key.clone(),
                separator: self.label_separator.clone(),
                dot_whitespace: self.dot_whitespace,
            },
            timestamp_key: self.xes.timestamp_key.clone(),
            trace_id_key: self.xes.trace_id_key.clone(),
        }
    }

    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            case_column: self.csv.case_column.clone(),
            label: LabelScheme {
                primary: self.csv.activity_column.clone(),
                secondary: self.csv.activity_secondary_column.clone(),
                separator: self.label_separator.clone(),
                dot_whitespace: self.dot_whitespace,
            },
            timestamp_column: self.csv.timestamp_column.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingSection {
    pub ngram_order: usize,
    pub categorical_attributes: Vec<String>,
    pub min_prefix_length: usize,
    pub full_trace_only: bool,
    pub split_ratio: f64,
    pub positive_class_name: String,
    pub negative_class_name: String,
}

impl Default for EncodingSection {
    fn default() -> Self {
        EncodingSection {
            ngram_order: 2,
            categorical_attributes: vec!["impact".to_string()],
            min_prefix_length: 2,
            full_trace_only: false,
            split_ratio: 0.8,
            positive_class_name: "Regular".to_string(),
            negative_class_name: "Push-to-Front".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSection {
    pub hidden_layer_sizes: Vec<usize>,
    pub input_dropout_ratio: f64,
    pub hidden_dropout_ratio: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let defaults = NetworkConfig::default();
        NetworkSection {
            hidden_layer_sizes: defaults.hidden_layer_sizes,
            input_dropout_ratio: defaults.input_dropout_ratio,
            hidden_dropout_ratio: defaults.hidden_dropout_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub rho: f64,
    pub epsilon: f64,
    pub minibatch_size: usize,
    pub max_epochs: usize,
    pub stopping_tolerance: f64,
    pub stopping_rounds: usize,
    pub lock_free_parallel: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let defaults = TrainingConfig::default();
        TrainingSection {
            rho: defaults.rho,
            epsilon: defaults.epsilon,
            minibatch_size: defaults.minibatch_size,
            max_epochs: defaults.max_epochs,
            stopping_tolerance: defaults.stopping_tolerance,
            stopping_rounds: defaults.stopping_rounds,
            lock_free_parallel: defaults.lock_free_parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionsSection {
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub instance_weighted_accuracy: bool,
    pub fit_baseline: bool,
}

impl Default for RegionsSection {
    fn default() -> Self {
        RegionsSection {
            k_min: 2,
            k_max: 40,
            restarts: 10,
            instance_weighted_accuracy: false,
            fit_baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSection {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_variance_reduction: f64,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        let defaults = TreeConfig::default();
        SurrogateSection {
            max_depth: defaults.max_depth,
            min_samples_leaf: defaults.min_samples_leaf,
            min_variance_reduction: defaults.min_variance_reduction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportSection {
    /// Also write one DOT file per cluster into the report directory.
    pub export_trees: bool,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { export_trees: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub ingestion: IngestionConfig,
    pub encoding: EncodingSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub regions: RegionsSection,
    pub surrogate: SurrogateSection,
    pub report: ReportSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            ingestion: IngestionConfig::default(),
            encoding: EncodingSection::default(),
            network: NetworkSection::default(),
            training: TrainingSection::default(),
            regions: RegionsSection::default(),
            surrogate: SurrogateSection::default(),
            report: ReportSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn encoding_config(&self) -> EncodingConfig {
        EncodingConfig {
            ngram_order: self.encoding.ngram_order,
            categorical_attributes: self.encoding.categorical_attributes.clone(),
            prefix_policy: PrefixPolicy {
                min_length: self.encoding.min_prefix_length,
                full_trace_only: self.encoding.full_trace_only,
            },
            label_rule: LabelRule::new(
                self.ingestion.label_rule.attribute.clone(),
                self.ingestion.label_rule.values.iter().cloned(),
            ),
            positive_class_name: self.encoding.positive_class_name.clone(),
            negative_class_name: self.encoding.negative_class_name.clone(),
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            hidden_layer_sizes: self.network.hidden_layer_sizes.clone(),
            input_dropout_ratio: self.network.input_dropout_ratio,
            hidden_dropout_ratio: self.network.hidden_dropout_ratio,
            seed: self.seed,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            rho: self.training.rho,
            epsilon: self.training.epsilon,
            minibatch_size: self.training.minibatch_size,
            max_epochs: self.training.max_epochs,
            stopping_tolerance: self.training.stopping_tolerance,
            stopping_rounds: self.training.stopping_rounds,
            lock_free_parallel: self.training.lock_free_parallel,
        }
    }

    pub fn surrogate_config(&self) -> TreeConfig {
        TreeConfig {
            max_depth: self.surrogate.max_depth,
            min_samples_leaf: self.surrogate.min_samples_leaf,
            min_variance_reduction: self.surrogate.min_variance_reduction,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Reads a TOML config file and applies the `XPPM_SEED` override if set.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config = PipelineConfig::from_toml(&text)?;
    if let Ok(seed) = std::env::var(SEED_ENV_VAR) {
        config.seed = seed
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV_VAR} must be an integer, got {seed:?}")))?;
    }
    Ok(config)
}
