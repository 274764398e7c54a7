//! Experiment harness for training speech enhancers on noisy targets:
//! configuration, grid runs with resume, results tables and reports.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod report;
pub mod table;

pub use error::{Error, Result};
