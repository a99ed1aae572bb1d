use thiserror::Error;

/// Errors raised by the solver and its plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("boundary closure failed: {0}")]
    Boundary(String),

    #[error("non-finite state: {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
