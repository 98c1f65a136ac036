use thiserror::Error;

/// Errors raised by the numerical kernels, estimators and simulation harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("density is zero at v = {v}")]
    DensityZero { v: f64 },

    #[error("no sign change bracketing the root of {what} (target {target})")]
    BracketFailure { what: &'static str, target: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("marginal cost matrix is singular or not positive definite")]
    SingularCost,

    #[error("not enough observations: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("match store holds no matched pairs")]
    EmptyStore,

    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("missing column `{0}`")]
    Schema(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("run with seed {seed} failed at t = {t}: {source}")]
    Run {
        seed: u64,
        t: usize,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
