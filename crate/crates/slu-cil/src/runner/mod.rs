//! Experiment orchestration: config parsing, the continual training loop,
//! task-boundary checkpointing and resumption, method sweeps, and result
//! emission.

mod config;
mod report;
mod state;
mod train;

pub use config::{
    resolve_output_root, CorpusSection, EvalSection, ExperimentConfig, KdSection, MethodKind,
    ModelSection, RehearsalSection, TeacherFrom, TrainingSection,
};
pub use report::{
    check_sweep_compatibility, comparison_csv, comparison_rows, load_summary, load_sweep_configs,
    report, sweep, ComparisonRow, SweepOutcome,
};
pub use state::{Counters, RunState};
pub use train::{resume, run_experiment, run_with_stop, ResumeOutcome, RunArtifacts, RunSummary};

#[cfg(test)]
mod tests;
