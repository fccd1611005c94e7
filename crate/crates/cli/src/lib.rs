//! Config parsing, experiment orchestration, CSV persistence and summary
//! tables for the `les` command.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod summary;

pub use commands::{run, summarize_files, RunOutcome};
pub use config::{parse_config, ExperimentConfig, StoppingSettings};
pub use error::{CliError, Result};
pub use summary::{quantile, summarize, SummaryRow, SummaryTable};
