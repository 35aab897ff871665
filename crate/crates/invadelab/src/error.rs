use thiserror::Error;

/// Crate-wide error type. Estimators and detectors validate their inputs up
/// front and report which requirement was violated rather than panicking.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate ({x}, {y}) outside the supported range (|x|, |y| < 2^30)")]
    CoordinateRange { x: i64, y: i64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no threshold estimates for scale {n}; run `invadelab pnqn` for this scale first")]
    MissingThreshold { n: i32 },

    #[error("search budget exhausted: {0}")]
    BudgetExhausted(String),

    #[error("malformed trace data: {0}")]
    MalformedTrace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for parameter validation failures.
pub fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
