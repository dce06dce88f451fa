//! Configuration, experiment orchestration, persistence and export.

pub mod checkpoint;
pub mod config;
pub mod record;
pub mod report;
pub mod run;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{CsvSource, DataConfig, DefenseKind, EvalConfig, ExperimentConfig, SweepConfig, SweepPoint};
pub use record::{append_records, read_records, NamedAttack, ResultsRecord, Stage, StageError, RECORD_FORMAT};
pub use report::{report, write_report, Report, ReportRow};
pub use run::{
    evaluate_checkpoint, export_representations, prepare_data, recompute_bounds, run, run_point, run_with, sweep,
    threat_of, train_point, utility_of, JobOptions, TaskData,
};
