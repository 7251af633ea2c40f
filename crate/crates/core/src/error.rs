use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unsupported space-time scheme: {0}")]
    UnsupportedScheme(String),

    #[error("numerically singular matrix in {0}")]
    Singular(&'static str),

    #[error("degenerate power allocation: {0}")]
    DegenerateAllocation(&'static str),

    #[error("{algorithm} diverged at iteration {iteration}: {detail}")]
    Divergence {
        algorithm: String,
        iteration: u64,
        detail: String,
    },

    #[error("instantaneous SNR undefined: zero noise term")]
    UndefinedSnr,

    #[error("receive filter for symbol {0} has zero norm")]
    SingularFilter(usize),

    #[error("enumeration of {candidates} candidates exceeds the cap of {cap}")]
    EnumerationCap { candidates: u64, cap: u64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported scenario: {0}")]
    UnsupportedScenario(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
