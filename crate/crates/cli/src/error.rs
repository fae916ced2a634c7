use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config file or input files.
    #[error("{0}")]
    Usage(String),
    /// A check failed or an experiment could not complete.
    #[error("{0}")]
    Failure(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] bottomup::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
            CliError::Core(e) => match e {
                bottomup::Error::Config(_) | bottomup::Error::Parse { .. } => EXIT_USAGE,
                _ => EXIT_FAILURE,
            },
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
