use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("parameter mismatch: {0}")]
    ParamsMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite input at index {0}")]
    NonFinite(usize),

    #[error("malformed encoding: {0}")]
    Decode(String),

    #[error("aggregation overflow at index {index}: {value} outside [{min}, {max}]")]
    Overflow {
        index: usize,
        value: i64,
        min: i64,
        max: i64,
    },

    #[error("missing share or message from party {0}")]
    MissingParty(u32),

    #[error("duplicate share or message from party {0}")]
    DuplicateParty(u32),

    #[error("protocol violation: unexpected {message} in phase {phase}")]
    ProtocolViolation { message: String, phase: String },

    #[error("re-encryption key pair failed validation at client {0}")]
    ReEncKeyInvalid(u32),

    #[error("aborted in {phase}: {source}")]
    Aborted {
        phase: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
