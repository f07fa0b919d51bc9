use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported or corrupt image data: {0}")]
    UnsupportedFormat(String),
    #[error("image has a zero dimension ({width}x{height})")]
    EmptyImage { width: usize, height: usize },
    #[error("cannot write {path}: {reason}")]
    Unwritable { path: PathBuf, reason: String },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("value {value} outside [{lower}, {upper}] for {what}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("singular Gram matrix (duplicate key features with r = 0?)")]
    SingularGram,
    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("pixel {0} is already selected")]
    AlreadySelected(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("response source failed: {0}")]
    Respond(String),
}

pub type Result<T> = std::result::Result<T, Error>;
