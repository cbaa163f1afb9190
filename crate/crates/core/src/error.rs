use thiserror::Error;

/// Errors raised while building, evaluating or auditing an energy-tank loop.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value produced by {map}")]
    NonFinite { map: &'static str },

    #[error("structural invariant violated: {0}")]
    Invariant(String),

    #[error("tank interconnection is singular at x_t = {x_t:e} (T = {energy:e})")]
    Singularity { x_t: f64, energy: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed trace at row {row}: {message}")]
    Trace { row: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
