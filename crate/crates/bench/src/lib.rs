//! Benchmark harness for the longitudinal UPDRS models: run
//! configuration, metrics, reports, artifacts and the refinement ledger.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod ledger;
pub mod metrics;
pub mod models;
pub mod report;
pub mod run;
pub mod study;

pub use config::{ConfigFile, ModelKind, ModelPlan, ModelSettings, Overrides, RunConfig};
pub use error::{BenchError, Result};
pub use metrics::{metrics, Metrics};
pub use report::{BenchReport, ReportRow, RowOutcome};
pub use run::{run_benchmark, run_in_memory, BenchOutcome};
