//! CLI error wrapper mapping failures onto the process exit codes:
//! 1 usage/config, 2 simulation fault (headroom), 3 I/O.

use std::fmt;

use macdo::SimError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Sim(SimError),
    Io(String),
}

impl CliError {
    pub fn io(context: &str, err: std::io::Error) -> Self {
        Self::Io(format!("{context}: {err}"))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Sim(SimError::Headroom { .. }) => 2,
            Self::Sim(_) => 1,
            Self::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(msg) => write!(f, "{msg}"),
            Self::Sim(err) => write!(f, "{err}"),
            Self::Io(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<SimError> for CliError {
    fn from(err: SimError) -> Self {
        Self::Sim(err)
    }
}

pub type CliResult<T> = Result<T, CliError>;
