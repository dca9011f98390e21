use alloc::string::String;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid model or run configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// A sequence is empty or does not fit the context window.
    #[error("length error: {0}")]
    Length(String),
    /// A caller broke an operation's contract.
    #[error("contract error: {0}")]
    Contract(String),
    /// A dataset record does not match its schema.
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    /// An input item was rejected (e.g. a conversation longer than a block).
    #[error("rejected: {0}")]
    Rejected(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
