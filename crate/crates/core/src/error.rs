use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the detector engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("layer `{layer}`: shape mismatch, expected {expected}, got {actual}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        actual: String,
    },

    #[error("invalid stride {0}, only 1 and 2 are supported")]
    InvalidStride(usize),

    #[error("invalid grouping: {0}")]
    InvalidGroups(String),

    #[error("channel index {index} out of range for {channels} channels")]
    ChannelOutOfRange { index: usize, channels: usize },

    #[error("tensor `{0}` missing from weight store")]
    MissingWeight(String),

    #[error("input {height}x{width} is smaller than the minimum of {min} px")]
    InputTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(
        layer: impl Into<String>,
        expected: impl std::fmt::Debug,
        actual: impl std::fmt::Debug,
    ) -> Self {
        Error::ShapeMismatch {
            layer: layer.into(),
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    pub(crate) fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Error::File { path: path.to_path_buf(), source }
    }
}
