use datn_core::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("inconsistent dimensions: {0}")]
    Dimensions(String),

    #[error("probability {value} outside (0, 1)")]
    ProbabilityOutOfRange { value: f64 },

    #[error("caption must contain at least one real token")]
    EmptyCaption,

    #[error("question must contain at least one token")]
    EmptyQuestion,

    #[error("token id {token} exceeds vocabulary size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("answer id {answer} exceeds class count {classes}")]
    AnswerOutOfRange { answer: usize, classes: usize },

    #[error("threshold {0} must lie in (0, 1)")]
    InvalidThreshold(f64),
}
