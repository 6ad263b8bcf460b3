use std::path::PathBuf;

use thiserror::Error;

use crate::norms::DeonticOperator;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("episode `{0}` has no frames")]
    EmptyEpisode(String),

    #[error("sample list is empty")]
    EmptySamples,

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no extractor registered under `{0}`")]
    NoExtractor(String),

    #[error("knowledge base has no learned centroids")]
    EmptyKnowledgeBase,

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("category `{0}` has no centroids")]
    UntrainedModel(String),

    #[error("norm already exists for ({context}, {action}, {operator})")]
    DuplicateNorm {
        context: String,
        action: String,
        operator: DeonticOperator,
    },

    #[error("action `{0}` is not in the action vocabulary")]
    UnknownAction(String),

    #[error("action vocabulary is empty")]
    EmptyVocabulary,

    #[error("oracle failed: {0}")]
    Oracle(String),

    #[error("unsupported knowledge base version `{0}`")]
    Version(String),

    #[error("episode `{0}` has no ground-truth label")]
    MissingGroundTruth(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
