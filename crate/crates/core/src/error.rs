use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: invalid {field}: {message}")]
    Parse {
        line: usize,
        field: &'static str,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A caller violated a shape or indexing contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient entry in {tensor} at index {index}")]
    NonFiniteGradient { tensor: String, index: usize },

    #[error("training set has no target-behavior interactions")]
    EmptyTrainingSet,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("metrics document: {0}")]
    Metrics(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
