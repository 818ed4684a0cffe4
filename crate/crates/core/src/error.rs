use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed line: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: unknown node id `{id}`")]
    UnknownNode {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("{path}:{line}: unknown type or relation `{name}`")]
    UnknownType {
        path: PathBuf,
        line: usize,
        name: String,
    },

    #[error("{path}:{line}: label on non-target type for node `{id}`")]
    LabelOnNonTarget {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("{path}:{line}: feature dimension mismatch (expected {expected}, found {found})")]
    FeatureDimension {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid node id {0}")]
    InvalidNode(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no negative candidates")]
    NoNegativeCandidates,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at {0}")]
    Diverged(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(other),
            },
        }
    }
}
