//! Support library of the `misiv` binary: configuration files, sample
//! ingestion/export, and deterministic formatting. Kept as a library target
//! so integration tests can drive the same code paths the binary uses.

pub mod config;
pub mod fmt;
pub mod io;

/// Errors with an associated process exit code: 2 for input problems, 3 for
/// identification failures, 4 for internal invariant breaches.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Identification(String),
    Internal(String),
}

impl CliError {
    pub fn input(msg: String) -> Self {
        CliError::Input(msg)
    }

    pub fn from_lib(err: misiv::Error) -> Self {
        use misiv::Error as E;
        match err {
            E::InvalidParams(_) | E::InfeasibleMomentTriple { .. } => {
                CliError::Input(err.to_string())
            }
            E::InvariantBreach(_) => CliError::Internal(err.to_string()),
            _ => CliError::Identification(err.to_string()),
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Identification(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Identification(m) | CliError::Internal(m) => m,
        }
    }
}
