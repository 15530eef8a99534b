use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Wav { path: PathBuf, message: String },

    #[error("{}: audio has zero length", path.display())]
    EmptyAudio { path: PathBuf },

    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },

    #[error("invalid band plan: {0}")]
    BandPlan(String),

    #[error("sample rate mismatch: encoder expects {expected} Hz, got {actual} Hz")]
    RateMismatch { expected: u32, actual: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("encoder bridge: {0}")]
    Bridge(String),

    #[error("feature cache: {0}")]
    Cache(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Manifest { .. }
                | Error::BandPlan(_)
                | Error::RateMismatch { .. }
                | Error::Shape(_)
                | Error::Invalid(_)
                | Error::Json(_)
        )
    }
}
