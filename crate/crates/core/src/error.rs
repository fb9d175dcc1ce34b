use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("no row has a bias gradient above the activity threshold")]
    NoActiveRow,
    #[error("outside the formula's domain: {0}")]
    Domain(String),
    #[error("enumeration guard exceeded: {count} compositions > limit {limit}")]
    GuardExceeded { count: u128, limit: u128 },
    #[error("attack metadata does not match payload: {0}")]
    Mismatch(String),
}

pub type Result<T> = core::result::Result<T, Error>;
