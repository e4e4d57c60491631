//! Command implementations behind the `qprune` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_compare, cmd_distill, cmd_eval, cmd_features, cmd_prune, cmd_train};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
