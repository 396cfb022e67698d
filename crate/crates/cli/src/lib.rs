//! Command implementations behind the `episens` binary.

pub mod commands;
pub mod config;
pub mod output;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, unreadable or inconsistent data, impossible request.
    #[error("{0}")]
    Input(String),
    /// The numerics failed: no convergence, blow-up, too many failed runs.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}
