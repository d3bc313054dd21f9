use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point {point} lies outside the {half_space} half-space")]
    OutsideHalfSpace { point: String, half_space: &'static str },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("the Appell map is singular at t = 0")]
    Pole,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("linear program failed: {reason} (best feasible value {best_feasible:?})")]
    Solver { reason: String, best_feasible: Option<f64> },

    #[error("quadrature did not converge: value {value}, error estimate {error}")]
    Quadrature { value: f64, error: f64 },

    #[error("precondition violated at {point}: {reason}")]
    Precondition { point: String, reason: String },

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
