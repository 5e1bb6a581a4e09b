//! Experiment configuration: a human-editable TOML file describing the
//! corpus, schedule, method, model preset, and training settings.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamWConfig;
use crate::cil::SelectionStrategy;
use crate::data::{default_catalog, load_corpus_spec, CorpusSpec};
use crate::distill::{KdConfig, KdKind, LambdaRule, Reduction};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng::fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    /// Upper bound: one macro-task holding every scenario.
    Offline,
    /// Lower bound: task-by-task training with no memory.
    FineTuning,
    /// Rehearsal buffer, plain CE.
    Rehearsal,
    /// Rehearsal buffer plus the configured KD losses.
    RehearsalKd,
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MethodKind::Offline => "offline",
            MethodKind::FineTuning => "fine-tuning",
            MethodKind::Rehearsal => "rehearsal",
            MethodKind::RehearsalKd => "rehearsal-kd",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Path to a corpus spec TOML; the built-in catalog when absent.
    pub spec_path: Option<PathBuf>,
    pub samples_per_scenario: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// "desk" (default) or "paper".
    pub preset: String,
    pub dropout: Option<f64>,
    pub hidden_size: Option<usize>,
    pub encoder_layers: Option<usize>,
    pub decoder_layers: Option<usize>,
    pub heads: Option<usize>,
    pub ffn_size: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "desk".into(),
            dropout: None,
            hidden_size: None,
            encoder_layers: None,
            decoder_layers: None,
            heads: None,
            ffn_size: None,
        }
    }
}

/// Which checkpoint of the finished task becomes the next teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherFrom {
    /// The validation-selected checkpoint (default).
    Best,
    /// The final epoch's parameters.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub reduction: Reduction,
    pub teacher_from: TeacherFrom,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            epochs: vec![24, 14, 10],
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.1,
            clip_norm: 1.0,
            reduction: Reduction::MeanPerToken,
            teacher_from: TeacherFrom::Best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RehearsalSection {
    pub strategy: SelectionStrategy,
    pub budget: f64,
}

impl Default for RehearsalSection {
    fn default() -> Self {
        Self {
            strategy: SelectionStrategy::Random,
            budget: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct KdSection {
    pub kinds: Vec<KdKind>,
    pub soft_beam_width: Option<usize>,
    pub lambda: Option<LambdaRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub beam_width: usize,
    pub full_sequence_wer: bool,
    /// Length-normalize beam hypothesis selection during evaluation.
    /// Without it, partially-trained models prefer degenerate one-token
    /// decodes under the summed score, which distorts every metric.
    pub length_normalize: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            beam_width: 4,
            full_sequence_wer: false,
            length_normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Extra seeds for sweep aggregation; `seed` is used when absent.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    pub tasks: usize,
    pub method: MethodKind,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub rehearsal: RehearsalSection,
    #[serde(default)]
    pub kd: KdSection,
    #[serde(default)]
    pub eval: EvalSection,
    /// Output directory, relative to the output root.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Parse(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| Error::Parse(format!("config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("experiment name must not be empty".into()));
        }
        if self.tasks == 0 {
            return Err(Error::Config("task count must be positive".into()));
        }
        let expected_epochs = if self.method == MethodKind::Offline {
            1
        } else {
            self.tasks
        };
        if self.training.epochs.len() != expected_epochs {
            return Err(Error::Config(format!(
                "epoch list length {} does not match task count {} for method {}",
                self.training.epochs.len(),
                expected_epochs,
                self.method
            )));
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.eval.beam_width == 0 {
            return Err(Error::Config("beam width must be >= 1".into()));
        }
        let uses_rehearsal =
            matches!(self.method, MethodKind::Rehearsal | MethodKind::RehearsalKd);
        if uses_rehearsal && !(self.rehearsal.budget > 0.0 && self.rehearsal.budget <= 1.0) {
            return Err(Error::Config(format!(
                "rehearsal budget {} outside (0,1]",
                self.rehearsal.budget
            )));
        }
        match self.method {
            MethodKind::RehearsalKd if self.kd.kinds.is_empty() => {
                return Err(Error::Config(
                    "method rehearsal-kd requires at least one KD kind".into(),
                ));
            }
            MethodKind::Offline | MethodKind::FineTuning | MethodKind::Rehearsal
                if !self.kd.kinds.is_empty() =>
            {
                return Err(Error::Config(format!(
                    "KD kinds configured but method {} does not use rehearsal KD",
                    self.method
                )));
            }
            _ => {}
        }
        Ok(())
    }

    /// Effective task count: offline collapses to one macro-task.
    pub fn effective_tasks(&self) -> usize {
        if self.method == MethodKind::Offline {
            1
        } else {
            self.tasks
        }
    }

    /// The corpus spec this run uses, with section overrides applied.
    pub fn corpus_spec(&self) -> Result<CorpusSpec> {
        let mut spec = match &self.corpus.spec_path {
            Some(path) => load_corpus_spec(path)?,
            None => default_catalog(
                self.corpus.seed.unwrap_or(7),
                self.corpus.samples_per_scenario.unwrap_or(180),
                self.corpus.noise_sigma.unwrap_or(0.1),
            ),
        };
        if let Some(n) = self.corpus.samples_per_scenario {
            spec.samples_per_scenario = n;
        }
        if let Some(s) = self.corpus.noise_sigma {
            spec.noise_sigma = s;
        }
        if let Some(seed) = self.corpus.seed {
            spec.seed = seed;
        }
        Ok(spec)
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut mc = match self.model.preset.as_str() {
            "desk" => ModelConfig::desk_scale(vocab_size),
            "paper" => ModelConfig::paper_scale(vocab_size),
            other => {
                return Err(Error::Config(format!(
                    "unknown model preset {other:?} (expected \"desk\" or \"paper\")"
                )))
            }
        };
        if let Some(d) = self.model.dropout {
            mc.dropout = d;
        }
        if let Some(h) = self.model.hidden_size {
            mc.hidden_size = h;
        }
        if let Some(l) = self.model.encoder_layers {
            mc.encoder_layers = l;
        }
        if let Some(l) = self.model.decoder_layers {
            mc.decoder_layers = l;
        }
        if let Some(h) = self.model.heads {
            mc.heads = h;
        }
        if let Some(f) = self.model.ffn_size {
            mc.ffn_size = f;
        }
        mc.validate()?;
        Ok(mc)
    }

    pub fn optimizer_config(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.training.learning_rate,
            weight_decay: self.training.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn kd_config(&self) -> KdConfig {
        let kinds: BTreeSet<KdKind> = self.kd.kinds.iter().copied().collect();
        let mut kd = KdConfig {
            kinds,
            ..KdConfig::default()
        };
        if let Some(w) = self.kd.soft_beam_width {
            kd.soft_beam_width = w;
        }
        if let Some(l) = self.kd.lambda {
            kd.lambda = l;
        }
        kd
    }

    /// Canonical short label for comparison tables.
    pub fn method_label(&self) -> String {
        match self.method {
            MethodKind::Offline => "offline".into(),
            MethodKind::FineTuning => "fine-tuning".into(),
            MethodKind::Rehearsal => format!(
                "rehearsal-{}-{}pct",
                self.rehearsal.strategy,
                self.rehearsal.budget * 100.0
            ),
            MethodKind::RehearsalKd => {
                let kinds: Vec<String> = self
                    .kd_config()
                    .kinds
                    .iter()
                    .map(|k| k.to_string())
                    .collect();
                format!(
                    "rehearsal-{}-{}pct+{}-kd",
                    self.rehearsal.strategy,
                    self.rehearsal.budget * 100.0,
                    kinds.join("+")
                )
            }
        }
    }

    /// Stable hash over the canonical serialized form.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a64(json.as_bytes())
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }
}

/// Output root precedence: explicit flag, then the environment variable,
/// then the current directory.
pub fn resolve_output_root(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var("SLU_CIL_OUT_ROOT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from(".")
}
