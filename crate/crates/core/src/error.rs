use thiserror::Error;

/// Errors raised by the dp-mtv library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("layer {0} is not present in the tensor")]
    UnknownLayer(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dataset too small: need at least {required} examples (m*(K+1)), got {available}")]
    DatasetTooSmall { required: usize, available: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("model fingerprint mismatch: artifact built for `{artifact}`, model is `{model}`")]
    FingerprintMismatch { artifact: String, model: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
