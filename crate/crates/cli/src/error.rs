use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Engine(#[from] streamrtr::Error),
    #[error("missing columns {missing:?}; header is {header:?}")]
    Schema { missing: Vec<String>, header: Vec<String> },
    #[error("frame: {0}")]
    Frame(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("minibatch {index}: {source}")]
    Minibatch {
        index: usize,
        #[source]
        source: streamrtr::Error,
    },
    #[error("config {path}:{line}: {message}")]
    Config { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

pub(crate) fn csv_err(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Csv { path, source }
}
