use std::process::ExitCode;

use thiserror::Error;

/// Failure of a subcommand, carrying its exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid config, or bad flag values.
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Output files could not be written.
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Infeasible(_) => "infeasible",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }
}

impl From<smjls::Error> for CliError {
    fn from(e: smjls::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
