//! The `airsig` command-line tool and its HTTP/WebSocket server.

pub mod commands;
pub mod config;
pub mod error;
pub mod server;

pub use commands::{run, Cli};
pub use error::CliError;
