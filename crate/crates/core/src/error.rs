use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (octave range, grid size, mask layout, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical parameter outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Two grids that must agree in shape do not.
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    /// Input that admits no meaningful answer (constant map, empty region).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Non-finite value found where the data model requires finite entries.
    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// Failure inside one cell of an experiment grid.
    #[error("config {config}, seed {seed}, lambda {lambda}, alpha {alpha:?}: {source}")]
    Experiment {
        config: String,
        seed: u64,
        lambda: f64,
        alpha: Option<f64>,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
