use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("feature bundle `{item}` does not match the model: {reason}")]
    BundleMismatch { item: String, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid margins: {0}")]
    InvalidMargins(String),

    #[error("caption `{0}` already contains a negation cue")]
    AlreadyNegated(String),

    #[error("caption `{0}` has no auxiliary or verb to negate")]
    NotNegatable(String),

    #[error("batch of {0} is too small; hardest-negative mining needs at least 2 items")]
    BatchTooSmall(usize),

    #[error("metric undefined for query `{0}`: no relevant items judged")]
    UndefinedMetric(String),

    #[error("runs cover different query sets: {0}")]
    QueryMismatch(String),

    #[error("no frame features for item `{0}`")]
    MissingFrames(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: at byte {offset}: {msg}", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
