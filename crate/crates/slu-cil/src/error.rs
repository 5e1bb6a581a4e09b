//! Crate-wide error type. Variants map onto CLI exit-code categories.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape disagreement.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration value (model, schedule, experiment).
    #[error("invalid config: {0}")]
    Config(String),

    /// Invalid input to an operation (out-of-range lengths, bad framing).
    #[error("invalid input: {0}")]
    Input(String),

    /// API misuse (non-scalar backward target, KD without a teacher, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Inconsistent persisted or cross-referenced state.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Malformed corpus spec (unknown entity type in a template, ...).
    #[error("corpus spec error: {0}")]
    Spec(String),

    /// A metric evaluated on a domain where it is undefined.
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// File format / serialization failures.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable process exit code per error category (CLI contract).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Spec(_) => 2,
            Error::Input(_) => 3,
            Error::Usage(_) | Error::Undefined(_) => 4,
            Error::Numeric(_) => 5,
            Error::Integrity(_) => 6,
            Error::Shape(_) => 7,
            Error::Io(_) => 8,
            Error::Parse(_) => 9,
        }
    }
}
