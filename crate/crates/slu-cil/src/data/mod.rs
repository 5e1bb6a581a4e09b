//! Synthetic SLURP-like corpus: generation, augmented-transcription codec,
//! tokenizer, and stratified dataset splits.
//!
//! "Audio" is simulated: every word owns a fixed random codebook frame;
//! an utterance's feature sequence repeats each word's frame 1–3 times
//! (duration jitter) and adds Gaussian noise, so sequence length tracks
//! transcript length while ground truth stays exact.

mod augmented;
mod catalog;
mod io;
mod vocab;

pub use augmented::{decode_augmented, encode_augmented, AugmentedTranscript, ParseFlags, ParsedOutput};
pub use catalog::default_catalog;
pub use io::{load_corpus_dir, load_corpus_spec, save_corpus_dir, save_corpus_spec};
pub use vocab::{
    Vocabulary, BOS, BOS_ID, EOS, EOS_ID, FILL, FILL_ID, PAD, PAD_ID, SEP, SEP_ID, SPECIALS,
    UNK, UNK_ID,
};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, derive_seed_n, fnv1a64, rng_from};

/// Utterance identifier; doubles as the global tie-break key.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct UttId(pub u32);

impl std::fmt::Display for UttId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub entity_type: String,
    pub value: Vec<String>,
}

/// One synthetic sample: simulated audio frames plus full semantics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: UttId,
    pub scenario: String,
    pub action: String,
    pub entities: Vec<Entity>,
    pub transcript: Vec<String>,
    pub features: Tensor,
}

impl Utterance {
    /// Intent token: the (scenario, action) pair serialized as one token.
    pub fn intent(&self) -> String {
        format!("{}_{}", self.scenario, self.action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityTypeSpec {
    pub name: String,
    /// Value pool; each entry is a space-separated word sequence.
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub action: String,
    /// Sentence with `{entity_type}` slots.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    /// Relative sampling frequency; must be positive.
    pub frequency: f64,
    pub actions: Vec<String>,
    pub entity_types: Vec<EntityTypeSpec>,
    pub templates: Vec<TemplateSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    /// Sample count for a scenario at relative frequency 1.0.
    pub samples_per_scenario: usize,
    pub noise_sigma: f64,
    pub feature_dim: usize,
    pub scenarios: Vec<ScenarioSpec>,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.len() < 2 {
            return Err(Error::Spec("need at least 2 scenarios".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Spec("feature_dim must be positive".into()));
        }
        let mut names = BTreeSet::new();
        for s in &self.scenarios {
            if !names.insert(s.name.clone()) {
                return Err(Error::Spec(format!("duplicate scenario {}", s.name)));
            }
            if s.frequency <= 0.0 {
                return Err(Error::Spec(format!(
                    "scenario {} has non-positive frequency",
                    s.name
                )));
            }
            if s.actions.is_empty() || s.templates.is_empty() {
                return Err(Error::Spec(format!(
                    "scenario {} needs actions and templates",
                    s.name
                )));
            }
            if self.scenario_count(s) < 10 {
                return Err(Error::Spec(format!(
                    "scenario {} would generate fewer than 10 samples",
                    s.name
                )));
            }
            let known: BTreeSet<&str> = s.entity_types.iter().map(|e| e.name.as_str()).collect();
            for e in &s.entity_types {
                if e.values.is_empty() || e.values.iter().any(|v| v.trim().is_empty()) {
                    return Err(Error::Spec(format!("entity type {} has empty values", e.name)));
                }
            }
            for t in &s.templates {
                if !s.actions.contains(&t.action) {
                    return Err(Error::Spec(format!(
                        "template action {} not declared in scenario {}",
                        t.action, s.name
                    )));
                }
                for slot in template_slots(&t.text) {
                    if !known.contains(slot.as_str()) {
                        return Err(Error::Spec(format!(
                            "template in {} references unknown entity type {}",
                            s.name, slot
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Rounded per-scenario sample count.
    pub fn scenario_count(&self, s: &ScenarioSpec) -> usize {
        (self.samples_per_scenario as f64 * s.frequency + 0.5).floor() as usize
    }

    /// Stable hash of the spec; schedules and sweeps use it to check that
    /// runs share a corpus.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("corpus spec serializes");
        fnv1a64(json.as_bytes())
    }
}

fn template_slots(text: &str) -> Vec<String> {
    let mut slots = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        if let Some(close) = rest[open..].find('}') {
            slots.push(rest[open + 1..open + close].to_string());
            rest = &rest[open + close + 1..];
        } else {
            break;
        }
    }
    slots
}

/// Dataset splits as id lists, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<UttId>,
    pub valid: Vec<UttId>,
    pub test: Vec<UttId>,
}

/// A generated corpus with its stratified 70:10:20 splits.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec_hash: u64,
    pub utterances: Vec<Utterance>,
    pub splits: Splits,
}

impl Corpus {
    pub fn utterance(&self, id: UttId) -> &Utterance {
        &self.utterances[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Distinct scenario names, sorted.
    pub fn scenarios(&self) -> Vec<String> {
        let set: BTreeSet<String> = self.utterances.iter().map(|u| u.scenario.clone()).collect();
        set.into_iter().collect()
    }

    /// Training-set cardinality per scenario.
    pub fn train_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for id in &self.splits.train {
            *counts
                .entry(self.utterance(*id).scenario.clone())
                .or_insert(0) += 1;
        }
        counts
    }
}

/// Pre-noise frames for a word sequence: each word's codebook vector
/// repeated 1–3 times, with repeats derived from (seed, word sequence).
pub fn pre_noise_frames(words: &[String], seed: u64, dim: usize) -> Vec<Vec<f64>> {
    let mut dur_rng = rng_from(derive_seed(seed, &format!("dur:{}", words.join(" "))));
    let mut frames = Vec::new();
    for w in words {
        let mut word_rng = rng_from(derive_seed(seed, &format!("word:{w}")));
        let norm = Normal::new(0.0, 1.0).unwrap();
        let code: Vec<f64> = (0..dim).map(|_| norm.sample(&mut word_rng)).collect();
        let repeats = dur_rng.random_range(1..=3usize);
        for _ in 0..repeats {
            frames.push(code.clone());
        }
    }
    frames
}

fn features_for(words: &[String], spec: &CorpusSpec, utt_seed: u64) -> Tensor {
    let mut frames = pre_noise_frames(words, spec.seed, spec.feature_dim);
    if spec.noise_sigma > 0.0 {
        let mut rng = rng_from(utt_seed);
        let noise = Normal::new(0.0, spec.noise_sigma).unwrap();
        for f in frames.iter_mut() {
            for v in f.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    let rows = frames.len();
    let data: Vec<f64> = frames.into_iter().flatten().collect();
    Tensor::new(vec![rows, spec.feature_dim], data).unwrap()
}

/// Generate the full corpus and its stratified splits, deterministically
/// from the spec (including its seed).
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut utterances = Vec::new();
    let mut splits = Splits {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };

    for scenario in &spec.scenarios {
        let count = spec.scenario_count(scenario);
        let mut rng = rng_from(derive_seed(spec.seed, &format!("gen:{}", scenario.name)));
        let first_id = utterances.len() as u32;
        for k in 0..count {
            let template = &scenario.templates[rng.random_range(0..scenario.templates.len())];
            let mut transcript: Vec<String> = Vec::new();
            let mut entities: Vec<Entity> = Vec::new();
            for word in template.text.split_whitespace() {
                if let Some(ty) = word.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
                    let et = scenario
                        .entity_types
                        .iter()
                        .find(|e| e.name == ty)
                        .ok_or_else(|| {
                            Error::Spec(format!("template references unknown entity type {ty}"))
                        })?;
                    let raw = &et.values[rng.random_range(0..et.values.len())];
                    let value: Vec<String> =
                        raw.split_whitespace().map(|w| w.to_string()).collect();
                    transcript.extend(value.iter().cloned());
                    entities.push(Entity {
                        entity_type: ty.to_string(),
                        value,
                    });
                } else {
                    transcript.push(word.to_string());
                }
            }
            let id = UttId(utterances.len() as u32);
            let utt_seed = derive_seed_n(spec.seed, "noise", &[id.0 as u64, k as u64]);
            let features = features_for(&transcript, spec, utt_seed);
            utterances.push(Utterance {
                id,
                scenario: scenario.name.clone(),
                action: template.action.clone(),
                entities,
                transcript,
                features,
            });
        }

        // stratified 70:10:20 split within the scenario
        let mut ids: Vec<UttId> = (first_id..utterances.len() as u32).map(UttId).collect();
        let mut split_rng = rng_from(derive_seed(spec.seed, &format!("split:{}", scenario.name)));
        ids.shuffle(&mut split_rng);
        let n = ids.len();
        let n_train = (n as f64 * 0.7 + 0.5).floor() as usize;
        let n_valid = (n as f64 * 0.1 + 0.5).floor() as usize;
        splits.train.extend(&ids[..n_train]);
        splits.valid.extend(&ids[n_train..n_train + n_valid]);
        splits.test.extend(&ids[n_train + n_valid..]);
    }

    splits.train.sort();
    splits.valid.sort();
    splits.test.sort();

    Ok(Corpus {
        spec_hash: spec.hash(),
        utterances,
        splits,
    })
}

/// Build the closed vocabulary over a corpus: specials, intent tokens,
/// then every token that appears in augmented transcriptions.
pub fn build_vocabulary(corpus: &Corpus) -> Result<Vocabulary> {
    let mut intents = Vec::new();
    let mut others = Vec::new();
    for u in &corpus.utterances {
        intents.push(u.intent());
        for e in &u.entities {
            others.push(e.entity_type.clone());
        }
        others.extend(u.transcript.iter().cloned());
    }
    Ok(Vocabulary::build(&intents, &others))
}
