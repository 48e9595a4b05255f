use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    /// Malformed recording or record file; `line` is 1-based.
    #[error("data error at line {line}: {msg}")]
    Data { line: usize, msg: String },

    #[error("filter design error: {msg} (achieved {achieved_db:.2} dB, required {required_db:.2} dB)")]
    Design { msg: String, achieved_db: f64, required_db: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Process exit code used by the CLI: 2 for configuration problems,
    /// 3 for anything wrong with the data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Design { .. } | Error::Resolution(_) => 2,
            Error::Json(e) if e.is_syntax() || e.is_data() => 2,
            _ => 3,
        }
    }
}
