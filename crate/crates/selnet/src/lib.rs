//! File formats, experiment pipelines and the `selnet` command line for
//! [`selnet_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod report;

pub use error::{Error, Result};
