#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Experiment harness: bundled problems, TOML configuration and the runner
//! behind the `maxweight` command-line tool.

pub mod config;
pub mod problems;
pub mod run;

use thiserror::Error;

pub use config::ExperimentConfig;
pub use run::{execute, prepare, write_outputs, ExitKind, RunOutput};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] maxweight::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Runtime(String),
}

impl ExperimentError {
    pub fn exit_kind(&self) -> ExitKind {
        use maxweight::Error as E;
        match self {
            Self::Config(_) => ExitKind::Validation,
            Self::Solver(E::OracleDidNotConverge { .. } | E::Io(_) | E::ArrivalFile(_)) => ExitKind::Runtime,
            Self::Solver(_) => ExitKind::Validation,
            Self::Io(_) | Self::Runtime(_) => ExitKind::Runtime,
        }
    }
}
