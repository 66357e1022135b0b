use asconvsr_core::Error as CoreError;

/// Command failure, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    /// Wraps a core error raised while handling `context`.
    pub fn core(context: impl std::fmt::Display, e: CoreError) -> Self {
        let msg = format!("{context}: {e}");
        match e {
            CoreError::Diverged { .. } | CoreError::NonFinite { .. } => CliError::Numeric(msg),
            CoreError::InvalidArgument(_) => CliError::Usage(msg),
            _ => CliError::Data(msg),
        }
    }

    /// Wraps a core error that can only come from bad input data.
    pub fn data(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
