//! Command-line pipeline around `psyagree-core`: file schemas, run
//! configuration, response screening, per-category analysis and agreement
//! reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;

pub use commands::run;
pub use config::RunConfig;
pub use error::{CliError, CliResult};
