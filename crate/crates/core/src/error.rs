use std::path::PathBuf;

use laglm_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unknown frequency code {0:?}")]
    UnknownFrequency(String),
    #[error("invalid timestamp {0:?}")]
    InvalidTimestamp(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("no series in the corpus admits a window of length {window_len}")]
    NoValidWindow { window_len: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite {what} at epoch {epoch}, batch {batch} (datasets {datasets})")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
        datasets: String,
    },
    #[error("unknown {kind} {name:?}; registered: {known}")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
