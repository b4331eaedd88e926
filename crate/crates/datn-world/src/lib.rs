//! Deterministic synthetic scene world: tiny grid scenes of colored
//! shapes, templated captions, typed question/answer pairs, vocabulary
//! construction and line-delimited JSON persistence.
//!
//! Everything is a pure function of `(seed, config)`, so regeneration is
//! bit-identical and datasets can be reproduced from their meta record.

pub mod dataset;
pub mod error;
pub mod scene;
pub mod text;
pub mod vocab;

pub use dataset::{generate_dataset, Dataset, QaRecord, QuestionType, Sample, WorldConfig};
pub use error::WorldError;
pub use scene::{Color, ObjectSize, Scene, SceneObject, Shape, Zone};
pub use vocab::{build_vocab, Vocabulary, END_ID, PAD_ID, START_ID, UNK_ID};

pub type Result<T> = std::result::Result<T, WorldError>;
