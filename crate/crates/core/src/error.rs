use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by `{0}`")]
    NonFinite(String),

    #[error("`{0}` has no second-order rule and cannot be differentiated twice")]
    NoHigherOrder(&'static str),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("training diverged at critic step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
