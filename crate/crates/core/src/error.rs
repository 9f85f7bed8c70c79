use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numerical precondition was violated (empty sample, bad quantile level).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid experiment, rule, strategy or baseline parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's contract (e.g. calibrating an unselected point).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index {index} out of range for ledger of length {len}")]
    Index { index: usize, len: usize },

    #[error("instance too large for exhaustive enumeration: {size} > {bound}")]
    TooLarge { size: usize, bound: usize },

    #[error("malformed config at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
