use std::fmt;

use vts_core::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

/// A one-line diagnostic and the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numeric(_) | Error::NonFiniteGradient { .. } => EXIT_NUMERIC,
            Error::Protocol(_) | Error::MissingFiles(_) | Error::Format { .. } | Error::Io { .. } => EXIT_DATA,
            _ => EXIT_CONFIG,
        };
        Self { code, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Re-labels any failure as a configuration problem (e.g. a bad checkpoint).
pub trait AsConfig<T> {
    fn as_config(self) -> CliResult<T>;
}

impl<T> AsConfig<T> for vts_core::Result<T> {
    fn as_config(self) -> CliResult<T> {
        self.map_err(|e| CliError::config(e.to_string()))
    }
}

/// Re-labels any failure as a data problem.
pub trait AsData<T> {
    fn as_data(self) -> CliResult<T>;
}

impl<T> AsData<T> for vts_core::Result<T> {
    fn as_data(self) -> CliResult<T> {
        self.map_err(|e| CliError::data(e.to_string()))
    }
}
