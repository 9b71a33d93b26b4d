use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants map onto the CLI's error categories.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("backward already ran on this graph; record a new forward pass first")]
    BackwardConsumed,

    #[error("backward needs a single-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    VocabOutOfRange { id: usize, vocab: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: bad magic (not a checkpoint file)")]
    CheckpointBadMagic,

    #[error("checkpoint: unsupported version {0}")]
    CheckpointBadVersion(u32),

    #[error("checkpoint: truncated while reading {0}")]
    CheckpointTruncated(&'static str),

    #[error("checkpoint: {0} trailing bytes after last entry")]
    CheckpointTrailingBytes(usize),

    #[error("lattice too large to enumerate: S + U = {got} exceeds {limit}")]
    OracleTooLarge { got: usize, limit: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("training diverged at step {step}: non-finite loss (batch: {utterances:?})")]
    Diverged { step: usize, utterances: Vec<String> },

    #[error("word error rate undefined: empty reference")]
    EmptyReference,

    #[error("gradient check failed for parameters: {0:?}")]
    GradCheckFailed(Vec<String>),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short category tag used by the CLI's error reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. }
            | Error::EmptyInput(_)
            | Error::BackwardConsumed
            | Error::NonScalarLoss(_) => "numerics",
            Error::VocabOutOfRange { .. } => "vocab",
            Error::InvalidConfig(_) | Error::Config(_) => "config",
            Error::CheckpointBadMagic
            | Error::CheckpointBadVersion(_)
            | Error::CheckpointTruncated(_)
            | Error::CheckpointTrailingBytes(_) => "checkpoint",
            Error::OracleTooLarge { .. } => "lattice",
            Error::Data(_) => "data",
            Error::Diverged { .. } => "train",
            Error::EmptyReference => "metrics",
            Error::GradCheckFailed(_) => "gradcheck",
            Error::Io(_) => "io",
        }
    }
}
