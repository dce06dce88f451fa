use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged in round {round}: {detail}")]
    Diverged { round: usize, detail: String },

    #[error("only one class present: {0}")]
    SingleClass(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {detail}")]
    Parse { row: usize, detail: String },

    #[error("ragged row {row}: expected {expected} fields, got {got}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("incompatible record version: {0}")]
    IncompatibleVersion(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
