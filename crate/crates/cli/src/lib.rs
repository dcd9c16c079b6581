//! Scenario-driven front-end for the `ltsens` library: HS decompositions,
//! sensitivity convergence tables, the four-family comparison and the
//! invariant suite.

pub mod commands;
pub mod scenario;
pub mod table;

use std::io;

pub use commands::{compare, decompose, sensitivity, validate, Options, Outcome, Status};
pub use scenario::{Format, Scenario};
pub use table::{Cell, Table};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable, malformed or invalid input.
    #[error("{0}")]
    Input(String),
    /// A computation that could not be completed (series or path failures).
    #[error("{0}")]
    Numerical(String),
    #[error("output: {0}")]
    Io(#[from] io::Error),
    #[error("output: {0}")]
    Csv(#[from] csv::Error),
    #[error("output: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<ltsens::Error> for CliError {
    fn from(e: ltsens::Error) -> Self {
        use ltsens::Error as E;
        match e {
            E::Validation(v) => CliError::Input(v.join("\n")),
            E::NonConvergence { .. } | E::FlaggedPaths { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }
}
