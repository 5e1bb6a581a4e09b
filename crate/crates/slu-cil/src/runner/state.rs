//! Run state persisted at task boundaries, enough to resume a run and
//! reproduce the uninterrupted result bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cil::RehearsalBuffer;
use crate::distill::SoftTranscriptStore;
use crate::error::{Error, Result};
use crate::metrics::MetricMatrices;

use super::config::ExperimentConfig;

/// Instrumentation gathered across a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub total_batches: usize,
    /// Batches with no rehearsal samples.
    pub pure_ce_batches: usize,
    /// Of those, batches whose total loss was bit-identical to CE.
    pub pure_ce_bitexact: usize,
    pub optimizer_steps: usize,
    pub steps_per_task: Vec<usize>,
    /// Σ|Δ| over teacher parameters across each task (tasks with a teacher).
    pub teacher_abs_delta_per_task: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunState {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub completed_tasks: usize,
    pub task_count: usize,
    pub matrices: MetricMatrices,
    pub buffer: Option<RehearsalBuffer>,
    pub soft_store: Option<SoftTranscriptStore>,
    /// Parameter hash of the selected checkpoint after each completed task.
    pub model_hashes: Vec<String>,
    /// Parameter hash of the teacher used during each task ("-" if none).
    pub teacher_hashes: Vec<String>,
    pub counters: Counters,
    pub unk_tokens: usize,
}

impl RunState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_vec_pretty(self).map_err(|e| Error::Parse(format!("state: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let state: RunState = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Parse(format!("state {}: {e}", path.display())))?;
        if state.config.hash_hex() != state.config_hash {
            return Err(Error::Integrity(
                "state file is internally inconsistent (config hash mismatch)".into(),
            ));
        }
        Ok(state)
    }
}
