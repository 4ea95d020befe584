use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix of size {size} is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { size: usize, jitter: f64 },

    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {x:?} lies outside the domain of {function}")]
    OutOfDomain { function: String, x: Vec<f64> },

    #[error("unsupported GP-sample task dimension {0} (expected one of 2, 4, 6, 12)")]
    UnsupportedDimension(usize),

    #[error("objective evaluation failed at iteration {iteration}: {source}")]
    Objective {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}
