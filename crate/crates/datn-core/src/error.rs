use thiserror::Error;

/// Errors raised by tensor construction, graph ops and optimizers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: unsupported operand shape {shape:?}")]
    UnsupportedShape { op: &'static str, shape: Vec<usize> },

    #[error("invalid shape {shape:?}: dimensions must be positive")]
    InvalidShape { shape: Vec<usize> },

    #[error("shape {shape:?} holds {expected} values but {got} were provided")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("{op}: index {index} out of range for size {size}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("backward root does not depend on any differentiable tensor")]
    NoGradPath,

    #[error("missing gradient for parameter {index} ({name})")]
    MissingGradient { index: usize, name: String },

    #[error("optimizer state holds {state} accumulators but {params} parameters were given")]
    StateSizeMismatch { state: usize, params: usize },

    #[error("{op}: value {value} outside the domain {domain}")]
    DomainError {
        op: &'static str,
        value: f64,
        domain: &'static str,
    },
}
