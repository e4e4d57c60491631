use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config keys or input paths; exit code 2.
    #[error("usage error: {0}")]
    Usage(String),
    /// Anything failing after the inputs were validated; exit code 1.
    #[error(transparent)]
    Run(#[from] qprune::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}
