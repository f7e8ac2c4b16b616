use thiserror::Error;

/// Errors raised by problem construction, the solvers and the estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("index {index} out of range for dataset of size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("infeasible step-size window: discriminant {discriminant:.6e} < 0")]
    InfeasibleWindow { discriminant: f64 },

    #[error("non-finite iterate at outer iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error(
        "iterate left the operating region at outer iteration {iteration}: \
         norm {norm:.6e} > radius {radius:.6e}"
    )]
    LeftRegion {
        iteration: usize,
        norm: f64,
        radius: f64,
    },

    #[error("bound evaluation overflowed (log value {log_value:.3e}); use a smaller K")]
    Overflow { log_value: f64 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Wraps the error with a human-readable location (trial, index, grid point).
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
