//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid problem construction: {0}")]
    Problem(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("operating-radius violation: |x| = {norm} exceeds R_op = {radius}")]
    OperatingRadius { norm: f64, radius: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn problem(msg: impl Into<String>) -> Self {
        Error::Problem(msg.into())
    }
    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
