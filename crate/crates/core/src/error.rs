use std::path::PathBuf;

/// Errors produced anywhere in the optimizer stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },

    #[error("invalid statistic: {0}")]
    InvalidStatistic(String),

    #[error("unknown table `{0}`")]
    UnknownTable(String),

    #[error("unknown column `{table}.{column}`")]
    UnknownColumn { table: String, column: String },

    #[error("no cardinality recorded for sub-query `{0}`")]
    LookupMiss(String),

    #[error("invalid query `{query}`: {reason}")]
    InvalidQuery { query: String, reason: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("invalid action {action}: {reason}")]
    InvalidAction { action: usize, reason: String },

    #[error("episode is not terminal")]
    EpisodeNotTerminal,

    #[error("episode is terminal; reset before stepping")]
    EpisodeTerminal,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("weight file: {0}")]
    Weights(String),

    #[error("too many relations: {count} exceeds the limit of {limit}")]
    TooManyRelations { count: usize, limit: usize },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// Wraps the error with a context string such as a fold or seed.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
