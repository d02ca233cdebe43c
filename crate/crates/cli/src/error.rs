use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] flexdep::Error),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{path}, line {line}, column '{column}': cannot parse '{value}'")]
    Cell {
        path: PathBuf,
        line: u64,
        column: String,
        value: String,
    },

    #[error("{path}: duplicate date {date}")]
    DuplicateDate { path: PathBuf, date: String },

    #[error("config: {0}")]
    Config(String),

    #[error("model file {path}: written by format version {found}, this build reads version {expected}")]
    VersionMismatch { path: PathBuf, found: i64, expected: i64 },

    #[error("model file {path}: section [{section}]: {message}")]
    ModelSection {
        path: PathBuf,
        section: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for input and configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(_) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
