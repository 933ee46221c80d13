use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("unsupported order {order} (maximum is {max})")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("empty input: sequence has no frames")]
    EmptyInput,

    #[error("budget {budget} exceeds frame count {frames}")]
    BudgetExceedsFrames { budget: usize, frames: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version {0} (expected 1)")]
    UnsupportedVersion(u32),

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: u64, actual: u64 },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
