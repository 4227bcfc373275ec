//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("xml parse error at line {line}, column {column}: {message}")]
    XmlParse {
        line: u32,
        column: u32,
        message: String,
    },

    #[error("csv parse error: {0}")]
    CsvParse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("degenerate black-box scores")]
    DegenerateScores,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("not in validation set: case {case_id} prefix {prefix_length}")]
    NotInValidationSet {
        case_id: String,
        prefix_length: usize,
    },

    #[error("unknown cluster {0}")]
    UnknownCluster(usize),

    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),

    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
