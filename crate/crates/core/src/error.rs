use thiserror::Error;

/// Errors produced by the tensor layer, the recovery engine and the
/// synthetic benchmark tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mode {mode} is out of range for a tensor of order {order}")]
    InvalidMode { mode: usize, order: usize },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid shape {0:?}: tensors need at least two modes and positive extents")]
    InvalidShape(Vec<usize>),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("minibatch {index} has shape {found:?}, stream shape is {expected:?}")]
    ShapeDrift {
        index: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("oracle did not converge: {0}")]
    OracleDiverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
