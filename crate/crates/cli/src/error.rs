//! Error classes and their process exit codes.
//!
//! | code | meaning                                             |
//! |------|-----------------------------------------------------|
//! | 0    | success                                             |
//! | 1    | internal error                                      |
//! | 2    | bad command line (reported by the argument parser)  |
//! | 3    | configuration: unreadable or invalid config, scenario or key file |
//! | 4    | network: cannot bind, connect, or the session failed |
//! | 5    | validation: malformed message, bundle or signature  |
//! | 6    | storage: the data directory cannot be read or written |

use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("storage error: {0}")]
    Storage(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) => 3,
            CliError::Network(_) => 4,
            CliError::Validation(_) => 5,
            CliError::Storage(_) => 6,
        }
    }

    pub fn config(e: impl fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn network(e: impl fmt::Display) -> Self {
        CliError::Network(e.to_string())
    }

    pub fn validation(e: impl fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }

    pub fn storage(e: impl fmt::Display) -> Self {
        CliError::Storage(e.to_string())
    }

    pub fn internal(e: impl fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
