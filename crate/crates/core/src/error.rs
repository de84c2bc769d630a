use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid return model: {0}")]
    InvalidModel(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("out of domain: {0}")]
    Domain(String),

    #[error("policy undefined at stage {stage}, wealth {wealth}, pool size {pool}")]
    PolicyUndefined { stage: usize, wealth: f64, pool: u32 },

    #[error("could not allocate solver storage at stage {stage}, pool size {pool}")]
    Resource { stage: usize, pool: u32 },

    #[error("artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
