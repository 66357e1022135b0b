use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),

    #[error("{op}: {what} ({value}) is not divisible by {divisor}")]
    Divisibility {
        op: &'static str,
        what: &'static str,
        value: usize,
        divisor: usize,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error(
        "parameter `{name}` has shape {expected:?} in the model but {got:?} in the checkpoint"
    )]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("backward called without a cached forward pass")]
    NoForwardCache,

    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}, file has {len}")]
    CheckpointTruncated {
        offset: usize,
        needed: usize,
        len: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(
        "checkpoint config mismatch on `{key}`: model has `{model}`, checkpoint has `{checkpoint}`"
    )]
    ConfigMismatch {
        key: String,
        model: String,
        checkpoint: String,
    },

    #[error("non-finite loss at iteration {iter} (lr = {lr:e}, max |param| = {max_abs_param:e})")]
    Diverged {
        iter: usize,
        lr: f64,
        max_abs_param: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
