//! Experiment harness: builds adversarial workloads, estimates clean-residual
//! statistics, runs the defence over a worker pool and writes CSV/JSON
//! reports. The `cad` binary is a thin CLI over [`commands`].

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod workload;

pub use commands::{cmd_bench, cmd_gen, cmd_run, cmd_stats, execute, RunOutput, SweepOutput};
pub use config::{ExperimentConfig, ReportFormat, StatsConfig, SweepConfig, SyntheticWorkload, TailSpec, Workload};
pub use error::{HarnessError, Result};
pub use report::{aggregate, designated_action, AggregateRow, InstanceRow, RunHeader, RunReport, TimingRow};
