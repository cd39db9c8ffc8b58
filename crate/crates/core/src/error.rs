use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("location set is empty for k={k}")]
    EmptyLocations { k: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("need at least {needed} elements, got {got}")]
    TooFewElements { needed: usize, got: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("k={k} outside the supported range 1..=12")]
    UnsupportedK { k: usize },

    #[error("unequal initial norms: {0} vs {1}")]
    UnequalNorms(f64, f64),

    #[error("forward cache does not match the network: {0}")]
    CacheMismatch(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
