//! Command-line driver for the landing-gear model: scenario simulation,
//! exploration, trace checking and the interactive session server.

pub mod commands;
pub mod server;
pub mod session;

pub use commands::{CliError, Exit};
