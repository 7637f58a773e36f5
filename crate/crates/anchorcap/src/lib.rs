//! File formats, configuration and commands around the `anchorcap-core`
//! estimation pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod executor;
pub mod export;
pub mod formats;
pub mod skeleton;

pub use config::Config;
pub use error::{CliError, Result};
