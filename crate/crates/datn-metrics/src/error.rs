use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("evaluation corpus is empty")]
    EmptyCorpus,

    #[error("corpus item {index} has no references")]
    MissingReferences { index: usize },

    #[error("n-gram order {0} outside 1..=4")]
    InvalidOrder(usize),

    #[error("{predictions} predictions vs {golds} gold answers")]
    LengthMismatch { predictions: usize, golds: usize },

    #[error("token '{0}' missing from the taxonomy")]
    UnknownToken(String),

    #[error("taxonomy {path}:{line}: {message}")]
    TaxonomyParse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("eval file {path}:{line}: {message}")]
    CorpusParse {
        path: String,
        line: usize,
        message: String,
    },
}
