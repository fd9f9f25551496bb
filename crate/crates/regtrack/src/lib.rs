//! Command-line front end, configuration and file formats for
//! `regtrack-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod selftest;

pub use error::{CliError, Result};
