//! Harness tying the world, models and metrics together: run
//! configuration, binary checkpoints, deterministic training loops,
//! evaluation reports, the ablation matrix and attention-map export.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod export;
pub mod trainer;

pub use checkpoint::TrainedState;
pub use config::{RunConfig, Task};
pub use error::HarnessError;

pub type Result<T> = std::result::Result<T, HarnessError>;
