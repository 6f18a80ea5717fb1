use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown frame `{0}`")]
    NotFound(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("validation failed: {0}")]
    Validation(String),

    /// A JSON input did not match its schema. `field` is the JSON path of the
    /// offending value (`.` when the document itself is malformed).
    #[error("{file}:{line}:{column}: at `{field}`: {message}")]
    Parse {
        file: String,
        field: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("constraint set is infeasible at priority level {level}")]
    Infeasible { level: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Parses `text` as JSON into `T`, reporting the JSON path, line and column on failure.
    pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(file: &str, text: &str) -> Result<T> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|err| {
            let field = err.path().to_string();
            let inner = err.into_inner();
            Error::Parse {
                file: file.to_string(),
                field,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })
    }
}
