use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("dataset at {0} contains no decodable images")]
    EmptyDataset(PathBuf),

    #[error("duplicate source id `{0}`")]
    DuplicateSourceId(String),

    #[error("zero matches between references and reconstructions")]
    NoMatches,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("adapter `{adapter}` failed: {message}")]
    Adapter { adapter: String, message: String },

    #[error("extractor `{name}` timed out after {seconds:.1}s")]
    Timeout { name: String, seconds: f64 },

    #[error("malformed extractor output from `{name}`: {message}")]
    MalformedOutput { name: String, message: String },

    #[error("extractor `{0}` returned a zero embedding")]
    ZeroEmbedding(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, max {max_eigenvalue:e})")]
    NotPsd {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn adapter(adapter: impl Into<String>, message: impl ToString) -> Self {
        Error::Adapter {
            adapter: adapter.into(),
            message: message.to_string(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
