use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not conform for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A line of an input file could not be parsed.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A triple references ids that cannot be resolved against the dataset.
    #[error("linkage error: {0}")]
    Linkage(String),

    /// A user or item id is not present in the dataset.
    #[error("unknown id: {0}")]
    Lookup(String),

    /// Internal state does not permit the requested operation.
    #[error("invalid state: {0}")]
    State(String),

    /// A computation produced or encountered a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Rejection sampling exhausted its attempt budget.
    #[error("sampling error: {0}")]
    Sampling(String),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
