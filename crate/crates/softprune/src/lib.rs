//! File formats, dataset loaders, experiment configuration and command
//! implementations on top of [`softprune_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
mod error;
pub mod maskfile;
pub mod report;

pub use error::{Error, Result};
