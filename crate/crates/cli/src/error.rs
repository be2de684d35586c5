use std::fmt;

use gampi::GampiError;

/// Failure of a subcommand, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Peel(String),
    Fit(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Peel(_) => 4,
            CliError::Fit(_) => 5,
        }
    }

    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Peel(m) => write!(f, "peeling failed: {m}"),
            CliError::Fit(m) => write!(f, "fit failed: {m}"),
        }
    }
}

impl From<GampiError> for CliError {
    fn from(e: GampiError) -> Self {
        match e {
            GampiError::InvalidInput(_) | GampiError::InvalidCovariance { .. } => CliError::Config(e.to_string()),
            GampiError::PeelStalled { ref columns, .. } => {
                let ids: Vec<String> = columns.iter().map(|j| format!("y{}", j + 1)).collect();
                CliError::Peel(format!("{e} (stuck columns: {})", ids.join(", ")))
            }
            other => CliError::Fit(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
