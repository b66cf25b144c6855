use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain config: {0}")]
    DomainConfig(String),

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("material: {0}")]
    Material(String),

    #[error("assembly: {0}")]
    Assembly(String),

    #[error("load: {0}")]
    Load(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
