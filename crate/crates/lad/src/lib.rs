//! File formats, configuration and the `lad` command line on top of `lad-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod io;
pub mod pool;
pub mod run;

pub use config::{Experiment, ExperimentConfig, FORMAT_VERSION};
pub use error::{Error, Result};
pub use pool::Pool;
