//! Configuration, experiment drivers and file pipeline behind the
//! `conceptlab` command.

pub mod config;
pub mod error;
pub mod experiments;
pub mod pipeline;

pub use config::{Dataset, Module, RunConfig};
pub use error::{CliError, ErrorKind};
