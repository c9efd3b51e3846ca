use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("coefficient q[{index}] = {value} outside [{lower}, {upper}]")]
    BoundsViolation {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-conditioned Jacobian (condition number {0:e})")]
    IllConditioned(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("estimator failure: {0}")]
    Estimator(String),

    #[error("internal numerical error: {0}")]
    Internal(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
