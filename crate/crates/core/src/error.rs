//! Error type shared across the toolkit.

use std::path::PathBuf;

/// Errors produced by any pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or inconsistent input data (bad header, size mismatch, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A patch, stamp, or index does not fit the host grid.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Input that carries no usable signal (all-zero image, zero variance, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Transform size not supported by the fast path.
    #[error("unsupported transform size {0}: not a power of two")]
    UnsupportedSize(usize),

    /// Too few usable points for a fit or estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Bad or missing run configuration.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
