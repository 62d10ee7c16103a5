use thiserror::Error;

use crate::discretize::Scheme;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("argument {value} outside the Legendre domain [-1, 1]")]
    OutOfDomain { value: f64 },

    /// A discretization produced a non-finite entry instead of silently
    /// propagating NaN/inf into the memory state.
    #[error("{scheme} discretization is numerically unstable at step k={step}")]
    Unstable { scheme: Scheme, step: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("bank capacity exhausted: block {requested} requested, capacity {capacity}")]
    CapacityExhausted { requested: usize, capacity: usize },

    #[error("memory retrieval requires at least one absorbed block")]
    EmptyHistory,

    #[error("bank cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn mismatch(
        context: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
