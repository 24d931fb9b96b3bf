use thiserror::Error;

/// Errors produced by the exponent and cutoff-rate machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate channel: {0}")]
    DegenerateChannel(&'static str),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("malformed distribution string at position {position}: {reason}")]
    Parse { position: usize, reason: String },

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(&'static str),

    #[error("quadrature did not converge: partial value {value}, estimated error {error}")]
    Quadrature { value: f64, error: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
