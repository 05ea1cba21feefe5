use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ZpruneError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid archive: {0}")]
    InvalidArchive(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("tensor `{0}` contains NaN or infinite values")]
    NonFinite(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
    #[error(transparent)]
    Engine(#[from] zprune_core::Error),
}

impl ZpruneError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ZpruneError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ZpruneError::Io { .. } => "IoError",
            ZpruneError::InvalidArchive(_) => "InvalidArchive",
            ZpruneError::Format(_) => "FormatError",
            ZpruneError::NonFinite(_) => "NonFinite",
            ZpruneError::MissingTensor(_) => "MissingTensor",
            ZpruneError::Manifest(_) => "ManifestError",
            ZpruneError::ThreadPool(_) => "RuntimeError",
            ZpruneError::Engine(e) => e.kind(),
        }
    }
}

pub type Result<T, E = ZpruneError> = std::result::Result<T, E>;
