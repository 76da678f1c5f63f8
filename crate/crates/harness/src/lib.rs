//! Experiment harness for self-modulated reservoir computing: configuration
//! files, dataset and checkpoint formats, run records, and the orchestration
//! behind the `smrc` command-line tool.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fsutil;
pub mod plots;
pub mod records;

pub use config::{ExperimentConfig, Preset};
pub use error::{HarnessError, Result};
