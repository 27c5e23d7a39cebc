use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// One of the recovery conditions (positivity, independence,
    /// determinantal) failed numerically.
    #[error("condition failure ({condition}): {detail}")]
    ConditionFailure {
        condition: &'static str,
        detail: String,
    },

    #[error("verification failure at order {order}, coefficient {coefficient}: {detail}")]
    VerificationFailure {
        order: usize,
        coefficient: usize,
        detail: String,
    },

    #[error("F-score undefined: both point sets are empty")]
    UndefinedScore,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
