use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A user-facing setting is invalid (bad flag, impossible architecture, zero std, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// NaN/Inf encountered, or training diverged.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Caller violated an API precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed bytes in a binary input.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension(_) | Error::Contract(_) => 2,
            Error::Numeric(_) => 3,
            Error::Format { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 4,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
