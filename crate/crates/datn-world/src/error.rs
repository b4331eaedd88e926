use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),

    #[error("{requested} objects requested but the grid only has {cells} cells")]
    TooManyObjects { requested: usize, cells: usize },

    #[error("{requested} concepts requested but only {eligible} eligible words exist")]
    ConceptCountTooLarge { requested: usize, eligible: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

impl WorldError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        WorldError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        WorldError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
