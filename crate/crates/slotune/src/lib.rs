//! Experiment runner, trial logs, reports and command-line front end for
//! the tuner in [`slotune_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod log;
pub mod report;
pub mod runner;

pub use error::{Error, Result};
