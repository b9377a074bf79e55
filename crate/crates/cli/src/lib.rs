//! Command-line front end: CSV ingestion, run configuration, and CSV/JSON
//! result emission for the incremental-effects estimators.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{execute, replay, ResultDocument};
pub use error::{CliError, Result};
