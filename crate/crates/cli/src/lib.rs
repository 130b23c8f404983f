//! Command-line front end: config loading and one function per subcommand.
//! The binary in `main.rs` only parses flags and maps errors to exit codes.

pub mod commands;
pub mod config;

pub use commands::{exit_code, Overrides};
pub use config::{ConfigError, RunConfig};
