use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A JSONL line could not be parsed as JSON.
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    /// A record parsed but violates the wire schema or a type invariant.
    #[error("line {line}: schema error in `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },

    /// A configuration value is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// The turn model failed; the dialogue is aborted at this turn.
    #[error("dialogue `{dialogue_id}` turn {turn_index}: {source}")]
    Turn {
        dialogue_id: String,
        turn_index: u32,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
