use thiserror::Error;

/// Errors raised by model construction, training and prediction.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape, range, nesting...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Cholesky factorization failed even after jitter escalation.
    #[error("numerical failure: {message} (hyperparameters: {params:?})")]
    Numerical { message: String, params: Vec<f64> },

    /// Every optimizer restart failed.
    #[error("training failed: {}", .diagnostics.join("; "))]
    Training { diagnostics: Vec<String> },

    /// A metric is undefined for the given data (e.g. constant targets for R2).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
