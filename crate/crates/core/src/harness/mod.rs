//! Configuration, data, phase schedules, experiment runs and reporting.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod plot;
pub mod preview;
pub mod schedule;

pub use config::{ExperimentConfig, VARIANTS};
pub use dataset::{ingest_dataset, synthetic_dataset, write_dataset, Dataset, SyntheticSpec};
pub use experiment::{eval_checkpoint, load_dataset, run_experiment, run_experiment_on, run_seeds, PhaseRecord, RunResult};
pub use plot::plot_results;
pub use preview::{compress_preview, PreviewReport};
pub use schedule::{build_schedule, PhaseCount, PhaseSchedule, Protocol};
