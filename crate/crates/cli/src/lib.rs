//! Config-driven experiment pipelines over the core library, shared by the
//! `hca` binary and the integration tests.

pub mod config;
pub mod pipeline;
pub mod report;

use thiserror::Error;

/// CLI failures, split by exit code: config problems exit 1, runtime and
/// numeric problems exit 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl From<hca_core::Error> for CliError {
    fn from(e: hca_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}
