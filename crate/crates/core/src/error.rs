use thiserror::Error;

/// Errors raised by grid construction, simulation and the estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("horizon not grid-aligned: T = {horizon} is not a multiple of h = {step}")]
    HorizonNotAligned { horizon: f64, step: f64 },

    #[error("time {time} outside [{lower}, {upper}]")]
    TimeOutOfRange { time: f64, lower: f64, upper: f64 },

    #[error("factor {factor} does not divide {divisor_of}")]
    NotDivisible { factor: usize, divisor_of: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("non-finite state {value} at step {step}: coefficient blow-up")]
    NonFinite { step: usize, value: f64 },

    #[error("Picard iteration did not settle after {iterations} iterations (last change {last_change:e}); operator is not causal")]
    PicardNotConverged { iterations: usize, last_change: f64 },

    #[error("reference bias {bias:e} exceeds half the standard error {stderr:e}; rerun with kappa_ref >= {suggested_kappa}")]
    ReferenceBias {
        bias: f64,
        stderr: f64,
        suggested_kappa: usize,
    },

    #[error("degenerate Malliavin covariance {gamma:e} on path {path}")]
    DegenerateCovariance { gamma: f64, path: u64 },

    #[error("regression failed at step {step}: {reason}")]
    Regression { step: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
