use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{row}: {message}")]
    Ingest {
        file: String,
        row: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("explanation error: {0}")]
    Xai(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingest(file: &str, row: usize, message: impl Into<String>) -> Self {
        Error::Ingest {
            file: file.to_string(),
            row,
            message: message.into(),
        }
    }

    /// Wraps the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Error category used for CLI exit codes: data problems versus internal failures.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_data_error(),
            Error::Ingest { .. }
            | Error::InvalidInput(_)
            | Error::Consistency(_)
            | Error::Artifact(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_) => true,
            Error::Model(_) | Error::Stats(_) | Error::Xai(_) => false,
        }
    }
}
