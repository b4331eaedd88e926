use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Model(#[from] datn_model::ModelError),

    #[error(transparent)]
    World(#[from] datn_world::WorldError),

    #[error(transparent)]
    Metrics(#[from] datn_metrics::MetricsError),

    #[error(transparent)]
    Tensor(#[from] datn_core::TensorError),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

impl HarnessError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn checkpoint(path: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Checkpoint {
            path: path.into(),
            message: message.into(),
        }
    }
}
