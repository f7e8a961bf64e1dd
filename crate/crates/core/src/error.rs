use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("duplicate record: {0}")]
    Duplicate(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("rank-deficient design: column `{column}` is collinear with {with:?}")]
    RankDeficient { column: String, with: Vec<String> },

    #[error("target has a single class ({0})")]
    SingleClass(String),

    #[error("zero variance in both samples")]
    ZeroVariance,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("missing artifact `{name}` at {path}")]
    MissingArtifact { name: String, path: PathBuf },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
