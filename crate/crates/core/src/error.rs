use thiserror::Error;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("graph structure: {0}")]
    Structure(String),
    #[error("empty graph: {0}")]
    EmptyGraph(String),
    #[error("empty crop: {0}")]
    EmptyCrop(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("infeasible scenario: {0}")]
    Scenario(String),
    #[error("failed to load {context}: {message}")]
    Load { context: String, message: String },
    #[error("evaluation protocol: {0}")]
    Protocol(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn load(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Load {
            context: context.into(),
            message: message.into(),
        }
    }
}
