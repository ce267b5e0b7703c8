use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid shape: {0}")]
    InvalidShape(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("mass invariant violated: total {total}, expected {expected}")]
    MassViolation { total: f64, expected: f64 },

    #[error("negative value {value} at site {site}")]
    NegativeValue { site: usize, value: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("instance too large: {0}")]
    SizeGuard(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
