use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampling pool too small: {0}")]
    Sampling(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Training { step: usize, loss: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate key {0}")]
    DuplicateKey(u64),

    #[error("corrupt store: {0}")]
    CorruptStore(String),

    #[error("{0} not found")]
    NotFound(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::Dim { expected, got }
    }
}
