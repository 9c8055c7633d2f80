//! Scenario construction, the repeat loop, baselines, significance tables
//! and report files.

pub mod compare;
pub mod config;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod suite;

pub use compare::{compare_methods, compare_reports, BaselineComparison, Metric, ProjectRuns, SignificanceTable};
pub use config::{Algorithm, ExperimentConfig, Method, Pairing, Precision, VersionOrder};
pub use report::{emit_report, read_report, ExperimentReport, MetricsReport, RepeatResult, SummaryStats};
pub use runner::{evaluate, load_datasets, run_experiment, run_experiment_logged, run_on_datasets, RoundLogEntry};
pub use scenario::{build_scenario, Scenario, ScenarioSpec};
