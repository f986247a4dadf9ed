use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),
    #[error("degenerate point configuration: {0}")]
    Degenerate(String),
    #[error("point count mismatch: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("point {index} lies behind the camera (depth {depth})")]
    BehindCamera { index: usize, depth: f64 },
    #[error("head projects entirely off-screen")]
    OffScreen,
    #[error("unsupported corner landmark count {0}; expected one of 9, 11, 13, 15, 17")]
    UnsupportedCount(usize),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("could not place {wanted} heads after {attempts} attempts")]
    Placement { wanted: usize, attempts: usize },
    #[error("record {index}: {message}")]
    Schema { index: usize, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
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

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Schema { .. }
                | Error::Validation(_)
                | Error::Config(_)
                | Error::OutOfRange(_)
                | Error::Json { .. }
                | Error::UnsupportedCount(_)
        )
    }
}
