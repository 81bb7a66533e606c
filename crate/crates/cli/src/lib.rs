//! Experiment driver: config loading, stage orchestration, manifests.
//!
//! The binary (`canids`) wires these pieces to subcommands. Everything
//! here is also callable directly so integration suites can drive full
//! experiments in-process.

pub mod config;
pub mod manifest;
pub mod runner;

pub use config::{load_config, ExperimentConfig, LoadedConfig};
pub use runner::{exit_code, Runner, Stage};
