//! Std companion of `srl-core`: configuration files and presets, output
//! formats with embedded provenance, the parallel sweep runner and the
//! subcommands behind the `srl` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod runner;
pub mod svg;

pub use config::RunConfig;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(srl_core::Error),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration, 3 for numerical or output failures, 4 for
    /// budget violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
            CliError::Budget(_) => 4,
        }
    }
}

impl From<srl_core::Error> for CliError {
    fn from(e: srl_core::Error) -> Self {
        use srl_core::Error as E;
        match e {
            E::InvalidParameter { .. } | E::DegenerateRate(_) => CliError::Config(e.to_string()),
            E::Budget { .. } | E::MemoryCap { .. } => CliError::Budget(e.to_string()),
            e => CliError::Numerical(e),
        }
    }
}
