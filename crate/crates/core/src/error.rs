//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by checkpoint (de)serialization.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic: expected \"VCDZ\"")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected 1)")]
    UnsupportedVersion(u32),
    #[error("unsupported tensor dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("trailing bytes after last tensor")]
    TrailingData,
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("tensor {name}: stored shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("signal too short: {len} samples, need at least one window of {win}")]
    SignalTooShort { len: usize, win: usize },

    #[error("utterance too short: {frames} frames, need at least {needed}")]
    UtteranceTooShort { frames: usize, needed: usize },

    #[error("unsupported wav file {path}: {reason}")]
    UnsupportedWav { path: PathBuf, reason: String },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than
    /// runtime failures. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::ShapeMismatch(_)
                | Error::NonFinite(_)
                | Error::SignalTooShort { .. }
                | Error::UtteranceTooShort { .. }
                | Error::UnsupportedWav { .. }
                | Error::Corpus(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
