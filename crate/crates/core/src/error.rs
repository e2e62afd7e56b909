use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("triangular matrix is singular (zero diagonal at index {0})")]
    SingularMatrix(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("Newton iteration did not converge after {iterations} steps (last step {last_step:e})")]
    NoConvergence {
        iterations: usize,
        last_step: f64,
        last: Box<crate::gp::LaplaceGPState>,
    },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{method}: {source}")]
    Method {
        method: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("theorem check failed: eps {eps:e} gives |p - 0.5| = {deviation:e}")]
    AssertionFailure { eps: f64, deviation: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn in_method(self, method: &'static str) -> Self {
        Error::Method {
            method,
            source: Box::new(self),
        }
    }
}
