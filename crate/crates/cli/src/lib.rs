//! Command line front end and HTTP service for the bev2ego pipeline.

pub mod commands;
pub mod error;
pub mod files;
pub mod serve;

pub use error::{CliError, CliResult};
