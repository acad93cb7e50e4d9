use thiserror::Error;

/// Errors produced by the training and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range; `field` names it.
    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },
    /// A call-site precondition was violated.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// An input record could not be used.
    #[error("bad data: {0}")]
    Data(String),
    /// A non-finite value showed up in weights, gradients or logits.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Artifacts produced under different configurations were mixed.
    #[error("incompatible artifact: {0}")]
    Compatibility(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
