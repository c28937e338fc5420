use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all Hermite coefficients fall below the threshold {threshold:e}")]
    RankUndetermined { threshold: f64 },

    #[error("non-finite operator output at sample {0}")]
    NonFinite(usize),

    #[error("summability condition failed: {0}")]
    ConditionFailed(String),

    #[error("summability condition indeterminate: {0}")]
    ConditionIndeterminate(String),

    #[error("supported size exceeded: {0}")]
    EnvelopeExceeded(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
