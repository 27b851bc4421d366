use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Dataset or manifest failed schema validation. `line` is 1-based.
    #[error("{message} at line {line}")]
    Schema { line: usize, message: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("no usable triplets")]
    NoUsableTriplets,

    #[error("degenerate projection")]
    DegenerateProjection,

    #[error("degenerate arm estimate for arm {0}")]
    DegenerateEstimate(usize),

    #[error("arm index {0} out of range")]
    InvalidArm(usize),

    #[error("unknown arm name {0:?}")]
    UnknownArm(String),

    #[error("reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),

    #[error("invalid config: {0}")]
    Config(String),

    /// The cost policy found no affordable arm for query `query_index`.
    #[error("Insufficient budget at query {query_index}")]
    InsufficientBudget { query_index: usize },

    #[error("cost policy: {0}")]
    CostPolicy(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(line: usize, message: impl Into<String>) -> Self {
        Error::Schema {
            line,
            message: message.into(),
        }
    }
}
