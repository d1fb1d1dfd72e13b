//! Configuration, run orchestration, artifacts and the verification suite of
//! the `bfd` command.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod verify;

pub use error::{CliError, Result};
