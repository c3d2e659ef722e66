use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e}, last iterate {last:?})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("cell ({col}, {row}) is outside the fishnet")]
    OutsideGrid { col: i64, row: i64 },

    #[error("node {0} is not covered by the partition")]
    Uncovered(usize),

    #[error("graphs cannot be merged: {0}")]
    Mismatch(String),

    #[error("malformed {kind}: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("missing upstream artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            kind,
            msg: msg.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}
