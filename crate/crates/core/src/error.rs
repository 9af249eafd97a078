use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::NumericsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0} contains no triplets")]
    EmptyGraph(String),

    #[error("graph already carries reverse relations")]
    AlreadyAugmented,

    #[error("operation requires a reverse-augmented graph")]
    NotAugmented,

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown {kind} label `{label}`")]
    UnknownLabel { kind: &'static str, label: String },

    #[error("id {id} out of range for {kind} (count {count})")]
    IdOutOfRange {
        kind: &'static str,
        id: usize,
        count: usize,
    },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
