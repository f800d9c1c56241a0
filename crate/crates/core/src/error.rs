use std::io;

use thiserror::Error;

use crate::model::RankingModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// A text input could not be parsed. `line` is 1-based; 0 means the
    /// input as a whole.
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("no preference pairs could be derived from the labels")]
    EmptyTrainingSet,

    #[error("non-finite value in parameter block `{block}`")]
    NonFinite { block: String },

    #[error("clicked document `{doc_id}` missing from ranking for query `{query}`")]
    MissingClick { query: String, doc_id: String },

    /// Training produced a non-finite loss. Carries the last model state
    /// whose losses were all finite.
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, snapshot: Box<RankingModel> },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format { line, msg: msg.into() }
    }
}
