//! Batch front end for `impulse-core`: TOML configs, a thread-pool executor,
//! CSV/JSON outputs with a run manifest, and the `impulse-lab` command line.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod output;

pub use cli::run_command;
pub use commands::{run, run_config, Command, Overrides, RunReport};
pub use config::Config;
pub use error::LabError;
pub use exec::Pool;
