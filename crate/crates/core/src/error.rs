use std::io;

use thiserror::Error;

/// Errors produced anywhere in the codec toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} outside support [{y_min}, {y_max}]")]
    OutOfSupport { value: i64, y_min: i32, y_max: i32 },

    #[error("channel has no samples")]
    EmptyChannel,

    #[error("spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("too many bins for frequency table: {bins} > {max}")]
    TooManyBins { bins: usize, max: usize },

    #[error("bad shape: {0}")]
    BadShape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short class name, stable for diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::OutOfSupport { .. } => "OutOfSupport",
            Error::EmptyChannel => "EmptyChannel",
            Error::SpecMismatch(_) => "SpecMismatch",
            Error::CorruptStream(_) => "CorruptStream",
            Error::TooManyBins { .. } => "TooManyBins",
            Error::BadShape(_) => "BadShape",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Diverged { .. } => "Diverged",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptStream(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::SpecMismatch(msg.into())
}
