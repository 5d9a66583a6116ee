//! Error type shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scenario block failed validation. `location` names the block and
    /// field (`run.eta`, `model.A`, ...) so errors point at the file.
    #[error("invalid scenario: {location}: {message}")]
    Validation { location: String, message: String },

    /// Matrix or vector dimensions are mutually inconsistent.
    #[error("dimension mismatch at {location}: {message}")]
    Dimension { location: String, message: String },

    /// A caller violated an operation contract (input out of bounds,
    /// horizon exceeded, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A kernel or value-table cache does not match the scenario that is
    /// asking for it.
    #[error("cache mismatch: {0}")]
    CacheMismatch(String),

    /// The requested kernel would exceed the configured memory cap.
    #[error("kernel of {requested} bytes exceeds memory cap of {cap} bytes")]
    MemoryCap { requested: u64, cap: u64 },

    /// Exhaustive enumeration guard tripped (test oracles only).
    #[error("instance too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { location: location.into(), message: message.into() }
    }

    pub fn dimension(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Dimension { location: location.into(), message: message.into() }
    }
}
