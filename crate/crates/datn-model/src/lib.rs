//! Model components for the synthetic vision-to-language tasks: a
//! multi-label concept predictor, a convolutional region encoder with a
//! bidirectional GRU, the dual semantic attention network, and the
//! caption-generation / question-answering heads built on top of it.
//!
//! All forward passes build nodes on a [`datn_core::Graph`]; parameters
//! live in named [`ParamSet`]s so the harness can checkpoint and
//! optimize them uniformly.

pub mod captioner;
pub mod concept;
pub mod error;
pub mod gru;
pub mod params;
pub mod region;
pub mod semantic;
pub mod vqa;

pub use captioner::{CaptionAblation, CaptionModel, DecodeMode, DecodeStep, DecodeTrace};
pub use concept::{concept_set, multilabel_loss, ConceptPredictor, ConceptState};
pub use error::ModelError;
pub use params::{Bound, ModelDims, ParamSet};
pub use region::{RegionGrid, RegionStage, SceneEncoder};
pub use semantic::{AttentionWeightMode, SemanticAttention, SemanticOutput};
pub use vqa::{VqaAblation, VqaModel, VqaOutput};

pub type Result<T> = std::result::Result<T, ModelError>;

/// A normalized attention vector with its provenance, ready for export.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub mechanism: AttentionMechanism,
    /// Decode timestep for word-guided attention; `None` for per-scene
    /// mechanisms.
    pub timestep: Option<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMechanism {
    WordGuided,
    QuestionGuided,
    SemanticRegion,
    SemanticConcept,
}

impl AttentionMechanism {
    pub fn name(self) -> &'static str {
        match self {
            AttentionMechanism::WordGuided => "word-guided",
            AttentionMechanism::QuestionGuided => "question-guided",
            AttentionMechanism::SemanticRegion => "semantic-region",
            AttentionMechanism::SemanticConcept => "semantic-concept",
        }
    }
}
