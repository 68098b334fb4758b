//! CLI failures and their exit codes.

use std::fmt;

use casemix_core::CasemixError;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input data.
    Input(String),
    /// Output could not be written.
    Io(String),
    /// A pipeline stage failed.
    Stage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Io(_) => 3,
            CliError::Stage(_) => 4,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Stage(m) => write!(f, "pipeline error: {m}"),
        }
    }
}

impl From<CasemixError> for CliError {
    fn from(e: CasemixError) -> Self {
        match e {
            CasemixError::Io(_) => CliError::Io(e.to_string()),
            CasemixError::Stage { stage, .. } => CliError::Stage(format!("[{stage}] {e}")),
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
