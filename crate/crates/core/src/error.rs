use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The token stream produced no tokens at all.
    #[error("empty corpus: no tokens in input")]
    EmptyCorpus,

    /// No co-occurrence pairs to aggregate.
    #[error("empty co-occurrence statistics: no pairs counted")]
    EmptyCooc,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A cell whose weight is zero carries no information; responses and
    /// targets are undefined there.
    #[error("degenerate cell ({word}, {context}): zero weight, no defined response")]
    DegenerateCell { word: u32, context: u32 },

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("zero vector for id {0}: cosine similarity undefined")]
    ZeroVector(u32),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Training produced a non-finite value; the offending cell is named so
    /// the run can be diagnosed.
    #[error("non-finite loss at cell ({word}, {context}) in epoch {epoch}")]
    NonFiniteLoss {
        word: u32,
        context: u32,
        epoch: usize,
    },

    #[error("{path}: malformed file: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(reason: impl Into<String>) -> Self {
        Error::InvalidArgument(reason.into())
    }
}
