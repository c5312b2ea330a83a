//! Command-line front end for `tic-core`: configuration files, CSV/JSON
//! tables and SVG plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod svg;

pub use config::RunConfig;
pub use error::{CliError, Result};
