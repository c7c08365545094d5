use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("batchnorm in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("max pooling needs even spatial dims, got {height}x{width}")]
    OddPoolInput { height: usize, width: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
}
