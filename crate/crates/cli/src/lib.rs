//! Command-line front end: builds the index, runs campaigns, evaluates
//! session logs and writes CSV reports.

use thiserror::Error;

pub mod args;
pub mod commands;
pub mod config;

pub use args::{run, Cli};
pub use commands::{evaluate, index, report, simulate, EvalRequest, EvalSummary, IndexReport, SimulateReport};
pub use config::{BackendKind, CampaignConfig, LoadedConfig, Overrides};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input detected before or instead of doing work.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{count} anomalies logged, threshold is {threshold}")]
    Anomalies { count: usize, threshold: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Anomalies { .. } => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
