use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("rate {0} must be finite and non-negative")]
    InvalidRate(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: v={v} exceeds q={q}")]
    InvalidState { q: u64, v: u64 },
    #[error("queue length {q} exceeded ceiling {ceiling} at slot {slot}")]
    QueueOverflow { q: u64, ceiling: u64, slot: u64 },
    #[error("no convergence within {cap} slots")]
    NotConverged { cap: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
