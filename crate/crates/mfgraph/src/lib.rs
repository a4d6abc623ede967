//! Experiment harness for `mfgraph-core`: configuration files, sweeps over
//! `N` and seeds, aggregation, text formats and the `mfgraph` CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod harness;
pub mod io;

pub use config::{ConcentrationConfig, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use harness::{
    fit_decay, run_experiment, sweep_report, write_outputs, ExperimentResult, Quantity, SweepPoint,
    SweepReport,
};
