use std::path::PathBuf;

/// Process exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("data: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric: {0}")]
    Numeric(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) | Error::Io { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

impl From<selfens_core::Error> for Error {
    fn from(e: selfens_core::Error) -> Self {
        match e {
            selfens_core::Error::NonFinite { .. } => Error::Numeric(e.to_string()),
            other => Error::Data(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
