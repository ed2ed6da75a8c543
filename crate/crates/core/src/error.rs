use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the canonicalization pipeline.
///
/// Each variant names the subsystem it came from so that the command-line
/// front end can emit a machine-parsable `error\t<module>\t<message>` line.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("corpus: {path}:{line}: {message}")]
    Ingest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("embedding: {0}")]
    Embedding(String),

    #[error("side_info: {0}")]
    SideInfo(String),

    #[error("hac: {0}")]
    Hac(String),

    #[error("mixture: {0}")]
    Mixture(String),

    #[error("diffusion: {0}")]
    Diffusion(String),

    #[error("kge: {0}")]
    Kge(String),

    #[error("trainer: {0}")]
    Train(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short name of the subsystem that produced the error.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Corpus(_) | Error::Ingest { .. } => "corpus",
            Error::Embedding(_) => "embedding",
            Error::SideInfo(_) => "side_info",
            Error::Hac(_) => "hac",
            Error::Mixture(_) => "mixture",
            Error::Diffusion(_) => "diffusion",
            Error::Kge(_) => "kge",
            Error::Train(_) => "trainer",
            Error::Metrics(_) => "metrics",
            Error::Config(_) => "config",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
