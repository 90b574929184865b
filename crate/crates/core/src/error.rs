use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{path}:{line}: format error: {msg}")]
    Format {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{path}:{line}:{col}: cannot parse {value:?}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        col: usize,
        value: String,
        msg: String,
    },

    #[error("{path}:{line}: duplicate record for {key}")]
    Duplicate {
        path: PathBuf,
        line: u64,
        key: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("channel {channel} has zero variance; cannot normalize")]
    DegenerateChannel { channel: &'static str },

    #[error("non-finite gradient in parameter group {group} ({tensor})")]
    NonFiniteGradient { group: String, tensor: String },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
