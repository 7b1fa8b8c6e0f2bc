//! File formats, metric reports, run manifests and the command-line
//! harness around `flowbench-core`.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
mod error;
pub mod manifest;
pub mod pgm;
pub mod report;
pub mod run;

pub use error::{Error, Result};
