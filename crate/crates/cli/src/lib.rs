//! Command implementations behind the `radar` binary.

pub mod config;
pub mod engine;
pub mod eval;
pub mod kb;
pub mod run;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input; exit status 2.
    #[error("config error: {0}")]
    Config(String),
    /// The command ran but could not complete; exit status 1.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}
