//! Command-line front end: scenario files, run artifacts, comparisons and
//! trace replay.

pub mod compare;
pub mod output;
pub mod replay;
pub mod scenario;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {key}: {message}")]
    Config { key: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("replayed summary differs from {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Trace { .. } => 3,
            CliError::Io { .. } | CliError::Mismatch(_) => 1,
        }
    }
}

pub use compare::{compare, parse_seeds, Axis, Comparison};
pub use output::write_run;
pub use replay::{parse_trace, replay_file};
pub use scenario::{load_scenario, parse_scenario};
