//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the localization toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("bad magic bytes in {kind} file (expected {expected:?})")]
    BadMagic { kind: &'static str, expected: [u8; 4] },

    #[error("unsupported {kind} format version {found} (this build reads version {expected})")]
    UnsupportedVersion {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("truncated {kind} file: {detail}")]
    Truncated { kind: &'static str, detail: String },

    #[error("malformed {kind} file: {detail}")]
    Malformed { kind: &'static str, detail: String },

    #[error("manifest error in {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("audio error: {0}")]
    Audio(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for shape errors built from format strings.
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
