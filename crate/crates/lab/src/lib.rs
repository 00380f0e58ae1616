//! File formats, reports and subcommands of the `npclab` experiment runner.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::LabConfig;
pub use error::{exit, LabError};
