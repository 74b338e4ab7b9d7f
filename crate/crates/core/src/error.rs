use std::path::PathBuf;

use crate::nn::NnError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("empty keyword vocabulary")]
    EmptyKeywordVocab,

    #[error("empty token vocabulary")]
    EmptyTokenVocab,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty context")]
    EmptyContext,

    #[error("unknown keyword `{0}`")]
    UnknownKeyword(String),

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("strategy `truth` requires truth keywords")]
    MissingTruthKeywords,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
