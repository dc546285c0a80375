//! Crate-wide error type.
//!
//! Every fallible operation in the crate returns [`Error`]. Variants are
//! grouped roughly by pipeline stage; the `Io` variant always carries the
//! offending path so CLI output can point at the file that failed.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Filesystem access failed (open, read, write, create_dir, ...).
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File exists but is not a format this crate reads (PNG/JPEG, 8-bit RGB).
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    /// Image decode failed (corrupt or truncated file).
    #[error("failed to decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// A numeric argument or pixel value is outside its documented range.
    #[error("value out of range: {0}")]
    RangeError(String),

    /// Two tensors or images that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Statistics fitting saw no usable lightness bin.
    #[error("no observed lightness bins; cannot fit dimming statistics")]
    NoObservedBins,

    /// Dimming was requested with statistics that still contain unfilled bins.
    #[error("illumination statistics are not fully filled")]
    UnfittedStats,

    /// A training loss became NaN or infinite.
    #[error("non-finite loss at iteration {iter}: {value}")]
    NonFiniteLoss { iter: usize, value: f64 },

    /// A dataset directory or manifest matched no usable images.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// A paired dataset root is missing its `low/` or `high/` subdirectory.
    #[error("missing subdirectory {subdir} under {root}")]
    MissingSubdir { root: PathBuf, subdir: String },

    /// Paired images whose pixel dimensions disagree.
    #[error("dimension mismatch for pair {name}: {details}")]
    DimensionMismatch { name: String, details: String },

    /// A subset manifest names a file the dataset does not contain.
    #[error("unknown filename in subset manifest: {0}")]
    UnknownFilename(String),

    /// An image is smaller than a metric's analysis window.
    #[error("image too small: {0}")]
    TooSmall(String),

    /// Evaluation found no filename overlap between the two directories.
    #[error("no prediction/ground-truth pairs found")]
    NoPairsFound,

    /// A checkpoint file is malformed or belongs to a different model kind.
    #[error("invalid checkpoint {path}: {details}")]
    InvalidCheckpoint { path: PathBuf, details: String },

    /// A config file or config struct fails validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A manifest or stats file does not parse.
    #[error("parse error in {path}: {details}")]
    ParseError { path: PathBuf, details: String },
}

impl Error {
    /// Wraps an io error together with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
