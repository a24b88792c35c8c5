use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite vector")]
    NonFinite,
    #[error("degenerate embedding")]
    DegenerateEmbedding,
    #[error("distance singularity")]
    DistanceSingularity,
    #[error("attack degenerate")]
    AttackDegenerate,
    #[error("diverged")]
    Diverged,
    #[error("degenerate class structure")]
    DegenerateClasses,
    #[error("mAP@R undefined")]
    MapUndefined,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        Error::Insufficient(msg.into())
    }
}
