use thiserror::Error;

#[derive(Debug, Error)]
pub enum KvqError {
    #[error("codebook index {index} out of range (K = {k})")]
    IndexOutOfRange { index: usize, k: usize },

    #[error("shape mismatch: expected dimension {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: u64, message: String },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KvqError>;
