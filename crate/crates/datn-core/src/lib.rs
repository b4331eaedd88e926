//! Dense double-precision tensors with reverse-mode automatic
//! differentiation on a linear tape, plus the SGD/RMSProp/Adam optimizers
//! and seeded RNG helpers used by the training harness.
//!
//! The computation graph is eager: every op validates its operand shapes,
//! computes its value immediately and records itself on the tape.
//! [`Graph::backward`] then walks the tape in reverse to populate
//! gradients. Evaluation order is fixed by construction, so repeated runs
//! over the same inputs are bit-identical.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::TensorError;
pub use graph::{Graph, NodeId};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, TensorError>;
