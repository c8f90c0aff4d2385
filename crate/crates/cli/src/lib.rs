//! Experiment harness behind the `wra` binary: config files, parallel trial
//! execution and CSV/JSON output.

pub mod commands;
pub mod config;
pub mod output;
pub mod runner;

use thiserror::Error;
use wra::evaluation::EvalError;
use wra::problems::ProblemError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for bad input, 3 for valid but unsupported combinations, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Unsupported(_) => 3,
            CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::InvalidInput(m) => CliError::Invalid(m),
            ProblemError::Unsupported(m) => CliError::Unsupported(m),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidInput(m) => CliError::Invalid(m),
            EvalError::Unsupported(m) => CliError::Unsupported(m),
        }
    }
}
