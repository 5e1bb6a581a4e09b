//! Class-incremental task schedules and rehearsal buffer management.
//!
//! Scenarios partition into tasks by descending training cardinality, so
//! the largest scenarios arrive first; the rehearsal buffer re-balances an
//! equal per-scenario quota after every completed task.

mod buffer;

pub use buffer::{herding_select, random_select, RehearsalBuffer, SelectionStrategy};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::data::{Corpus, UttId};
use crate::error::{Error, Result};

/// One task: its scenarios and per-split utterance ids (sorted by id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub scenarios: Vec<String>,
    pub train: Vec<UttId>,
    pub valid: Vec<UttId>,
    pub test: Vec<UttId>,
}

/// Ordered partition of scenarios into tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub tasks: Vec<TaskSpec>,
}

impl TaskSchedule {
    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    /// Scenarios seen once tasks 0..=t are complete.
    pub fn seen_scenarios(&self, t: usize) -> Vec<String> {
        let mut out: Vec<String> = self.tasks[..=t]
            .iter()
            .flat_map(|task| task.scenarios.iter().cloned())
            .collect();
        out.sort();
        out
    }

    /// Union of the test sets of tasks 0..=t.
    pub fn cumulative_test(&self, t: usize) -> Vec<UttId> {
        let mut out: Vec<UttId> = self.tasks[..=t]
            .iter()
            .flat_map(|task| task.test.iter().copied())
            .collect();
        out.sort();
        out
    }

    /// Union of the validation sets of tasks 0..=t.
    pub fn cumulative_valid(&self, t: usize) -> Vec<UttId> {
        let mut out: Vec<UttId> = self.tasks[..=t]
            .iter()
            .flat_map(|task| task.valid.iter().copied())
            .collect();
        out.sort();
        out
    }
}

/// Partition scenarios into `task_count` tasks of equal scenario count,
/// ordered by descending training cardinality (ties alphabetical).
pub fn build_schedule(corpus: &Corpus, task_count: usize) -> Result<TaskSchedule> {
    let scenarios = corpus.scenarios();
    if task_count == 0 {
        return Err(Error::Config("task count must be positive".into()));
    }
    if !scenarios.len().is_multiple_of(task_count) {
        return Err(Error::Config(format!(
            "{} scenarios are not divisible into {} tasks",
            scenarios.len(),
            task_count
        )));
    }
    let counts = corpus.train_counts();
    let mut ordered: Vec<(String, usize)> = scenarios
        .iter()
        .map(|s| (s.clone(), counts.get(s).copied().unwrap_or(0)))
        .collect();
    // descending cardinality, alphabetical tie-break
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let per_task = scenarios.len() / task_count;
    let tasks = ordered
        .chunks(per_task)
        .map(|chunk| {
            let names: BTreeSet<&str> = chunk.iter().map(|(s, _)| s.as_str()).collect();
            let filter = |ids: &[UttId]| {
                ids.iter()
                    .copied()
                    .filter(|id| names.contains(corpus.utterance(*id).scenario.as_str()))
                    .collect::<Vec<_>>()
            };
            TaskSpec {
                scenarios: chunk.iter().map(|(s, _)| s.clone()).collect(),
                train: filter(&corpus.splits.train),
                valid: filter(&corpus.splits.valid),
                test: filter(&corpus.splits.test),
            }
        })
        .collect();
    Ok(TaskSchedule { tasks })
}
