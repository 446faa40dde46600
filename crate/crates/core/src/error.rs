use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("capacity exceeded: {what} = {got} (limit {limit})")]
    Capacity {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("evolution did not converge (residual {residual:.3e} after {steps} substeps)")]
    Evolution { residual: f64, steps: usize },

    #[error("initial-state search exhausted after {trials} trials")]
    SearchExhausted { trials: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("no gap ratios available: {0}")]
    StatisticsUnavailable(String),

    #[error("measurement plan error: {0}")]
    Plan(String),

    #[error("missing measurement component: {0}")]
    Coverage(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
