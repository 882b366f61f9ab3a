use std::fmt;
use std::process::ExitCode;

use kdc_core::KdcError;

/// Usage, configuration or input failure.
pub const EXIT_CONFIG: u8 = 2;
/// Metric computation failure.
pub const EXIT_EVAL: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn eval(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_EVAL,
            message: message.into(),
        }
    }

    pub fn from_core_config(e: KdcError) -> Self {
        Self::config(e.to_string())
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<KdcError> for CliError {
    fn from(e: KdcError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::config(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
