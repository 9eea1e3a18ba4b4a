use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("non-finite sample at row {0}")]
    NonFiniteSample(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(f64, f64),

    #[error("non-finite input value")]
    NonFiniteInput,

    #[error("standardizer has not been fitted")]
    Unfitted,

    #[error("unsupported model file (bad magic or version): {0}")]
    VersionMismatch(String),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("not enough data: need at least {needed} {what}, got {got}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("undefined metric: {0}")]
    Undefined(&'static str),

    #[error("model {model} does not match benchmark {benchmark}")]
    ModelMismatch { model: String, benchmark: String },

    #[error("malformed message: {0}")]
    MalformedMessage(String),

    #[error("transport disconnected")]
    Disconnected,

    #[error("publish buffer full ({0} messages pending)")]
    BufferFull(usize),

    #[error("unknown model id: {0}")]
    UnknownModel(String),
}

pub type Result<T> = std::result::Result<T, Error>;
