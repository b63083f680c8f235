use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("step position {position} out of range for length bound {max_len}")]
    PositionOutOfRange { position: usize, max_len: usize },

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("unknown input id {0}")]
    UnknownInput(u32),

    #[error("value {value} outside [0, 1]")]
    OutOfUnitInterval { value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid log: {0}")]
    InvalidLog(String),

    #[error("degenerate denominator {0:e}")]
    DegenerateDenominator(f64),

    #[error("output space of {size} sequences exceeds enumeration limit {limit}")]
    SpaceTooLarge { size: f64, limit: usize },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
