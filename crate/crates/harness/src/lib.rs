//! Twin-experiment harness for the vfp-core filters and smoothers.
//!
//! A run is described by a TOML [`config::ExperimentConfig`]. The harness
//! generates a truth trajectory and synthetic observations, cycles the chosen
//! method over several repetitions and writes a JSON summary plus CSV series.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{ConfigError, HarnessError};
pub use experiment::{run_experiment, ExperimentResult, Status, Summary};
