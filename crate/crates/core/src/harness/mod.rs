//! Experiment orchestration: configs, seeded training runs, metric files,
//! checkpoints, the ensemble-size timing sweep and result reports.

pub mod checkpoint;
mod config;
mod report;
mod run;
mod runner;
mod sink;
mod speed;

pub use config::{Algorithm, ConfigError, ExperimentConfig, SpeedSettings};
pub use report::{build_report, load_runs, CvarRow, ProfileRow, Report, ReportError, ReturnRow, RunSummary};
pub use run::{evaluate_learner, evaluate_policy, tabular_policy_action, DeepRun, Metric, RunError, TabularRun, TrainingRun};
pub use runner::{checkpoint_path, drive, metrics_path, run_experiment, RunArtifacts, SeedOutcome};
pub use sink::{read_config_echo, read_metrics, MetricsWriter, CSV_HEADER};
pub use speed::{speed_benchmark, time_training, SpeedRow, SpeedTable};
