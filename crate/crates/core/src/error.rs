use std::path::PathBuf;

/// Errors produced across the summarization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid document {id:?}: {message}")]
    Validation { id: String, message: String },

    #[error("document {0:?} has no reference abstract")]
    MissingAbstract(String),

    #[error("no positive labels")]
    NoPositives,

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("masked softmax row {0} has no allowed entries")]
    EmptyMaskRow(usize),

    #[error("loss must be a 1x1 tensor, got {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("positional encoding dimension must be even, got {0}")]
    OddDimension(usize),

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("missing embedding for document {0:?}, sentence {1}")]
    MissingEmbedding(String, usize),

    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training corpus is empty")]
    EmptyCorpus,

    #[error("no training document carries a positive label")]
    NoLabeledDocuments,

    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("cannot load checkpoint: {0}")]
    CheckpointLoad(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied data rather than internal faults.
    pub fn is_data_error(&self) -> bool {
        !matches!(
            self,
            Error::ShapeMismatch { .. }
                | Error::EmptyMaskRow(_)
                | Error::NonScalarLoss(_)
                | Error::NonFiniteLoss { .. }
        )
    }
}
