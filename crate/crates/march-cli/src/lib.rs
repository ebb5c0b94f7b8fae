//! Library surface behind the `march` binary, exposed so integration
//! tests can drive the commands in-process.

pub mod commands;
pub mod config;
pub mod factory;

use thiserror::Error;

/// Command errors mapped to process exit codes: validation problems exit
/// 1, backend problems exit 2, and a partial batch failure exits 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Backend(String),
    #[error("{failures} case(s) failed")]
    PartialBatch { failures: usize, summary: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Backend(_) => 2,
            CliError::PartialBatch { .. } => 3,
        }
    }
}
