use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid window [{lo}, {hi}]: lower bound must be below upper bound")]
    InvalidWindow { lo: f64, hi: f64 },

    #[error("invalid dimensions {width}x{height}: {reason}")]
    InvalidDimension { width: usize, height: usize, reason: &'static str },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: (usize, usize), actual: (usize, usize) },

    #[error("invalid bounding box: {0}")]
    InvalidBbox(String),

    #[error("no body found in image")]
    EmptyBody,

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range 1..={max}")]
    Index { index: usize, max: usize },

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

/// Attaches a pipeline stage label to an error.
pub trait StageContext<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage: stage.into(),
            source: Box::new(e),
        })
    }
}
