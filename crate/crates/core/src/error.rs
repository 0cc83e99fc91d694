use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),

    #[error("span conflict: [{first_start}, {first_end}) overlaps [{second_start}, {second_end})")]
    SpanConflict {
        first_start: usize,
        first_end: usize,
        second_start: usize,
        second_end: usize,
    },

    #[error("span [{start}, {end}) is out of bounds for text of length {len}")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged on sequence `{note_id}` at epoch {epoch}: loss = {loss}")]
    Divergence {
        note_id: String,
        epoch: usize,
        loss: f64,
    },

    #[error("instance too large for exhaustive enumeration: {labels}^{len} label sequences")]
    TooLarge { labels: usize, len: usize },

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("checkpoint error in section `{section}`: {message}")]
    Checkpoint { section: String, message: String },

    #[error("unsupported checkpoint version `{0}`")]
    Version(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn checkpoint(section: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            section: section.into(),
            message: message.into(),
        }
    }
}
