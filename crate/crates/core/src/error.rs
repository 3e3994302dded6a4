use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("invalid image dimensions {height}x{width}: {reason}")]
    Dimension {
        height: usize,
        width: usize,
        reason: &'static str,
    },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("invalid landmarks: {0}")]
    Landmarks(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input or configuration rather than
    /// a runtime failure. The CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Version { .. } | Error::InsufficientData(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
