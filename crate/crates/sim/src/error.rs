use thiserror::Error;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("table of {0} bytes exceeds the largest fusion mode (1 MiB)")]
    UnsupportedSize(u64),

    #[error(transparent)]
    Core(#[from] instant3d::Error),
}

pub(crate) fn contract(msg: impl Into<String>) -> SimError {
    SimError::Contract(msg.into())
}
