//! Command-line entry points and the ABX session server.

pub mod commands;
pub mod config;
pub mod error;
pub mod plan;
pub mod server;

pub use error::{CliError, Result};
