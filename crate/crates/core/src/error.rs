use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-domain input data.
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration value (tolerance, confidence level, weights, ...) is out of range.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("record {id}: loss {loss} outside [0, {bound}]")]
    LossOutOfBounds { id: String, loss: f64, bound: f64 },

    #[error("no record could be assigned to a calibration group")]
    NoResolvableRecords,

    #[error("unsupported policy schema version {found:?} (expected {expected:?})")]
    SchemaVersion { found: String, expected: String },

    #[error("record {id}: missing or zero token count ({field})")]
    MissingTokens { id: String, field: &'static str },

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
