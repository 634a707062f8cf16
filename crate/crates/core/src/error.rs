use std::path::PathBuf;

use thiserror::Error;

use crate::model::NotebookId;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("notebook id must not be empty")]
    EmptyId,
    #[error("invalid weights: {0}")]
    InvalidWeights(&'static str),
    #[error("unknown output kind `{0}`")]
    UnknownOutputKind(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed notebook document: {0}")]
    MalformedDocument(String),
    #[error("notebook has no code cells")]
    EmptyNotebook,
    #[error("output record carries no recognized payload ({0})")]
    UnknownOutputType(String),
    #[error("failed to load table from {path}: {cause}")]
    TableLoadError { path: PathBuf, cause: String },
    #[error("invalid table manifest: {0}")]
    InvalidManifest(String),
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph construction failed: {0}")]
    Construction(String),
    #[error("cycle detected through nodes {0:?}")]
    CycleDetected(Vec<String>),
    #[error("invalid query graph: {0}")]
    InvalidQuery(String),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt graph for notebook {0}: {1}")]
    CorruptGraph(NotebookId, String),
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("duplicate notebook id {0}")]
    DuplicateId(NotebookId),
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io { path: path.into(), source }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<GraphError> for SearchError {
    fn from(e: GraphError) -> Self {
        SearchError::InvalidQuery(e.to_string())
    }
}
