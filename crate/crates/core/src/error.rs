use thiserror::Error;

/// Errors surfaced by the training framework.
#[derive(Debug, Error)]
pub enum MaserError {
    /// Shapes, dimensions or settings that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called in a state where it is not allowed.
    #[error("usage error: {0}")]
    Usage(String),

    /// A value that must stay finite became NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The replay buffer has nothing to sample from.
    #[error("replay buffer is empty; collect episodes before sampling")]
    EmptyBuffer,

    /// An episode violated the storage invariants.
    #[error("malformed episode: {0}")]
    MalformedEpisode(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = MaserError> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> MaserError {
    MaserError::Config(msg.into())
}
