//! Configuration, subcommands and artifact plumbing behind the `evsci`
//! binary.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{Overrides, PipelineConfig};
pub use error::{CliError, Result};
