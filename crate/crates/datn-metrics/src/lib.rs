//! Sequence and answer metrics: corpus-level BLEU-1..4, CIDEr,
//! exact-match accuracy and WUPS over a pluggable taxonomy.

pub mod bleu;
pub mod cider;
pub mod corpus;
pub mod error;
pub mod taxonomy;
pub mod wups;

pub use bleu::bleu;
pub use cider::cider;
pub use corpus::EvalItem;
pub use error::MetricsError;
pub use taxonomy::Taxonomy;
pub use wups::{accuracy, wups};

pub type Result<T> = std::result::Result<T, MetricsError>;
