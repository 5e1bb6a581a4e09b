//! Rehearsal buffer: fixed budget over the full training set, equal
//! per-scenario quotas, random or herding selection.
//!
//! Herding is the moving-barycenter greedy: repeatedly append the candidate
//! whose inclusion keeps the exemplar mean closest to the class mean.
//! Selections are prefix-consistent, so shrinking a quota keeps a prefix of
//! the previous selection order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::UttId;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStrategy {
    Random,
    Herding,
}

impl std::fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelectionStrategy::Random => write!(f, "random"),
            SelectionStrategy::Herding => write!(f, "herding"),
        }
    }
}

/// Fixed-budget exemplar store grouped by scenario. Values keep selection
/// order (herding order is meaningful).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RehearsalBuffer {
    pub budget: f64,
    pub strategy: SelectionStrategy,
    pub per_scenario: BTreeMap<String, Vec<UttId>>,
    /// Exemplars whose soft transcripts must be regenerated because the
    /// teacher changed at the last update.
    pub stale_soft: Vec<UttId>,
}

impl RehearsalBuffer {
    pub fn new(budget: f64, strategy: SelectionStrategy) -> Result<Self> {
        if !(budget > 0.0 && budget <= 1.0) {
            return Err(Error::Config(format!("budget {} outside (0,1]", budget)));
        }
        Ok(Self {
            budget,
            strategy,
            per_scenario: BTreeMap::new(),
            stale_soft: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.per_scenario.values().map(|v| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All stored ids, sorted.
    pub fn ids(&self) -> Vec<UttId> {
        let mut out: Vec<UttId> = self.per_scenario.values().flatten().copied().collect();
        out.sort();
        out
    }

    pub fn contains(&self, id: UttId) -> bool {
        self.per_scenario.values().any(|v| v.contains(&id))
    }

    /// Re-balance after finishing a task: distribute the fixed total budget
    /// (a fraction of the full training set) equally over all seen
    /// scenarios and re-select with the configured strategy.
    ///
    /// `candidates` maps every seen scenario to its completed-task training
    /// ids; `embed` supplies pooled embeddings for herding and may be a
    /// no-op closure for random selection. Every stored exemplar is marked
    /// as needing a fresh soft transcript.
    pub fn update<F>(
        &mut self,
        candidates: &BTreeMap<String, Vec<UttId>>,
        full_train_size: usize,
        seed: u64,
        mut embed: F,
    ) -> Result<()>
    where
        F: FnMut(UttId) -> Result<Vec<f64>>,
    {
        let total = (self.budget * full_train_size as f64).ceil() as usize;
        let quotas = allocate_quota(total, candidates);
        let mut next: BTreeMap<String, Vec<UttId>> = BTreeMap::new();
        for (scenario, ids) in candidates {
            let m = quotas[scenario].min(ids.len());
            let chosen = match self.strategy {
                SelectionStrategy::Random => {
                    let scen_seed = derive_seed(seed, &format!("select:{scenario}"));
                    sample_without_replacement(ids, m, scen_seed)
                }
                SelectionStrategy::Herding => {
                    let mut embedded = Vec::with_capacity(ids.len());
                    for &id in ids {
                        embedded.push((id, embed(id)?));
                    }
                    herding_select(&embedded, m)?
                }
            };
            next.insert(scenario.clone(), chosen);
        }
        self.per_scenario = next;
        self.stale_soft = self.ids();
        Ok(())
    }
}

/// Equal allocation of `total` slots over the candidate scenarios:
/// quotas differ by at most one, every scenario gets at least one, and
/// the +1 remainders go to the alphabetically first scenarios.
pub fn allocate_quota(
    total: usize,
    candidates: &BTreeMap<String, Vec<UttId>>,
) -> BTreeMap<String, usize> {
    let n = candidates.len().max(1);
    let base = total / n;
    let remainder = total % n;
    candidates
        .keys()
        .enumerate()
        .map(|(i, s)| {
            let quota = base + usize::from(i < remainder);
            (s.clone(), quota.max(1))
        })
        .collect()
}

fn sample_without_replacement(ids: &[UttId], m: usize, seed: u64) -> Vec<UttId> {
    let mut pool: Vec<UttId> = ids.to_vec();
    pool.sort();
    let mut rng = rng_from(seed);
    pool.shuffle(&mut rng);
    pool.truncate(m);
    pool.sort();
    pool
}

/// Uniform stratified selection: a fraction `budget` of the given pool,
/// allocated equally per scenario. Deterministic given the seed.
pub fn random_select(
    candidates: &BTreeMap<String, Vec<UttId>>,
    budget: f64,
    seed: u64,
) -> Result<BTreeMap<String, Vec<UttId>>> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(Error::Config(format!("budget {} outside (0,1]", budget)));
    }
    let pool: usize = candidates.values().map(|v| v.len()).sum();
    let total = (budget * pool as f64).ceil() as usize;
    let quotas = allocate_quota(total, candidates);
    Ok(candidates
        .iter()
        .map(|(s, ids)| {
            let m = quotas[s].min(ids.len());
            (
                s.clone(),
                sample_without_replacement(ids, m, derive_seed(seed, &format!("select:{s}"))),
            )
        })
        .collect())
}

/// iCaRL-style herding over one scenario's candidates.
///
/// Candidates must be sorted by id; distances compare on the squared
/// Euclidean norm with strict improvement, so equal distances resolve to
/// the earlier id.
pub fn herding_select(candidates: &[(UttId, Vec<f64>)], m: usize) -> Result<Vec<UttId>> {
    if m == 0 {
        return Ok(Vec::new());
    }
    if m > candidates.len() {
        return Err(Error::Input(format!(
            "cannot select {} exemplars from {} candidates",
            m,
            candidates.len()
        )));
    }
    let dim = candidates[0].1.len();
    if candidates.iter().any(|(_, e)| e.len() != dim) {
        return Err(Error::Shape("herding embeddings differ in dimension".into()));
    }
    debug_assert!(candidates.windows(2).all(|w| w[0].0 < w[1].0));

    let mut class_mean = vec![0.0; dim];
    for (_, e) in candidates {
        for (acc, v) in class_mean.iter_mut().zip(e) {
            *acc += v;
        }
    }
    for v in class_mean.iter_mut() {
        *v /= candidates.len() as f64;
    }

    let mut selected_sum = vec![0.0; dim];
    let mut selected: Vec<UttId> = Vec::with_capacity(m);
    let mut taken = vec![false; candidates.len()];
    for k in 0..m {
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, e)) in candidates.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let mut dist = 0.0;
            for j in 0..dim {
                let mean_j = (selected_sum[j] + e[j]) / (k + 1) as f64;
                let d = class_mean[j] - mean_j;
                dist += d * d;
            }
            match best {
                Some((_, bd)) if dist >= bd => {}
                _ => best = Some((i, dist)),
            }
        }
        let (i, _) = best.expect("at least one unselected candidate");
        taken[i] = true;
        for (acc, v) in selected_sum.iter_mut().zip(&candidates[i].1) {
            *acc += v;
        }
        selected.push(candidates[i].0);
    }
    Ok(selected)
}
