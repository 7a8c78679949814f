//! Experiments, output formats and configuration for the quantum-dot
//! dark-state simulator. The numerical engine lives in `darkstate_core`.

pub mod config;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod result;
pub mod run;

pub use config::{parse_config, Experiment, RunConfig};
pub use error::SimError;
pub use exec::Executor;
pub use result::{Column, ExperimentResult, Table};
