use std::path::PathBuf;

use thiserror::Error;

use crate::model::Span;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input is empty or whitespace-only")]
    EmptyInput,

    #[error("span {span} is invalid for a sentence of {len} tokens")]
    InvalidSpan { span: Span, len: usize },

    #[error("{0}")]
    InvalidInput(String),

    #[error("constraints exclude every completion")]
    NoFeasibleOutput,

    #[error("pair {key} not found in embedding store")]
    PairNotFound { key: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("non-finite activation in {0}")]
    NumericalError(&'static str),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("gold span {gold} lies outside the candidate window (source length {src_len}, k = {k})")]
    WindowViolation { gold: Span, src_len: usize, k: usize },

    #[error("input lengths differ: {left} vs {right}")]
    InputMismatch { left: usize, right: usize },

    #[error("record {0} has no acceptability label")]
    MissingLabels(String),

    #[error("training labels contain a single class")]
    DegenerateLabels,

    #[error("chain {chain} exhausted at iteration {iteration}: {reason}")]
    ChainExhausted {
        chain: usize,
        iteration: u32,
        reason: String,
    },

    #[error("missing created_order for {0}")]
    MissingMetadata(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
