use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("optimizer state poisoned: {0}")]
    Poisoned(String),

    #[error("memory guard: {entries} matrix entries requested, cap is {cap}; reduce the sample count E")]
    MemoryGuard { entries: usize, cap: usize },

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("malformed container: {0}")]
    Container(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Failures while parsing IDX (MNIST-style) files.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad magic number 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated {what}: need {needed} bytes, found {found}")]
    Truncated {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

impl Error {
    /// True for errors caused by non-finite numbers during a computation.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Poisoned(_))
    }
}
