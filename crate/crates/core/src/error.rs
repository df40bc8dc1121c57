use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("{field} out of {expected} (got {value})")]
    Invalid {
        field: &'static str,
        expected: &'static str,
        value: String,
    },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("dataset has {available} samples but {required} are needed")]
    DatasetTooSmall { available: usize, required: usize },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("no uplink: client has zero resource blocks")]
    NoUplink,

    #[error("infeasible decision: {0}")]
    Infeasible(String),

    #[error("model cut {model} does not match decision cut {decision}")]
    CutMismatch { model: usize, decision: usize },

    #[error("{0}")]
    Usage(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(field: &'static str, expected: &'static str, value: impl ToString) -> Self {
        Error::Invalid {
            field,
            expected,
            value: value.to_string(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
