//! Experiment plumbing: run directories, parameter sweeps and oracle
//! reports. The command-line front end is a thin layer over this module.

pub mod metrics;
pub mod oracle;
pub mod run;
pub mod sweep;

pub use metrics::{read_metrics, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use oracle::{run_oracle, OracleKind, OracleOptions, OracleReport};
pub use run::{replay, run_simulation, RunManifest, RunOptions, RunOutput, RunSummary};
pub use sweep::{run_sweep, SweepParam, SweepResult, SweepSpec};
