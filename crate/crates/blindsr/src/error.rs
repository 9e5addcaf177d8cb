//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes of operands do not line up (image sizes, kernel support, vector lengths).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A value lies outside the mathematical domain of an operation
    /// (nonpositive rate, uniform draw outside [0,1), zero noise level, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative routine produced non-finite values or otherwise broke down.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The operation is defined but not supported at the requested configuration.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Malformed on-disk data (manifest lines, kernel text files, params JSON).
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Codec {
        path: PathBuf,
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn codec(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Codec {
            path: path.into(),
            source,
        }
    }
}
