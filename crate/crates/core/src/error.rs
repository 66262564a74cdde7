use thiserror::Error;

/// Errors raised by the engine and its reference oracles.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A tree (base tree, TST or contraction) violates a structural rule.
    #[error("structural error: {0}")]
    Structure(String),
    /// An identifier was not found where one was required.
    #[error("lookup error: {0}")]
    Lookup(String),
    /// An index outside the permitted range.
    #[error("range error: {0}")]
    Range(String),
    /// An operation's precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// Invalid construction parameters.
    #[error("configuration error: {0}")]
    Config(String),
    /// The learner was driven out of protocol order.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// A caller-supplied value failed validation.
    #[error("validation error: {0}")]
    Validation(String),
    /// An exhaustive oracle would exceed its enumeration limit.
    #[error("size error: {0}")]
    Size(String),
    /// A metric-space input has the wrong dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    /// A query was made against an empty store.
    #[error("empty store")]
    Empty,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn structure(msg: impl Into<String>) -> Error {
    Error::Structure(msg.into())
}
