//! Experiment configuration, replicated studies, CSV data and reports.

mod config;
mod csvio;
mod experiment;
mod report;

pub use config::{DataSpec, DesignKind, EmulatorSpec, ExperimentConfig, TruthSpec};
pub use csvio::{load_csv, read_csv, write_csv, CsvLoad};
pub use experiment::{run_experiment, CellMetrics, MetricsReport, ReplicationRecord};
pub use report::emit_report;
