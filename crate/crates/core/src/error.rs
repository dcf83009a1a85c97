use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An input value violated a precondition.
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// A configuration value is invalid or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Sampling could not produce a valid output (e.g. no negative class).
    #[error("sampling error: {0}")]
    Sampling(String),

    /// Tensor or vector shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A numeric quantity became non-finite during training.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
