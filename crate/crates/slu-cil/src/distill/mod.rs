//! Training losses for rehearsal-based continual learning: cross-entropy
//! over current-task plus rehearsal data, three knowledge-distillation
//! losses against the previous-task teacher (audio embeddings, per-token
//! distributions, beam-searched soft transcriptions), a rehearsal-fraction
//! weighting rule, and their combination.
//!
//! All KD losses apply to the rehearsal samples of a batch only; a batch
//! without rehearsal data contributes pure CE, bit-exactly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{UttId, BOS_ID, EOS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::model::{BoundModel, DecodeOptions, Mode, Seq2SeqModel};

/// Frozen copy of the model at the end of task `task_index`, used as the
/// teacher for task `task_index + 1`.
pub struct TeacherSnapshot {
    pub model: Seq2SeqModel,
    pub task_index: usize,
}

impl TeacherSnapshot {
    pub fn new(model: &Seq2SeqModel, task_index: usize) -> Self {
        Self {
            model: model.clone(),
            task_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KdKind {
    Audio,
    Token,
    Seq,
}

impl std::fmt::Display for KdKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KdKind::Audio => write!(f, "audio"),
            KdKind::Token => write!(f, "token"),
            KdKind::Seq => write!(f, "seq"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaRule {
    /// √(b_rehe / b_all)
    SqrtFraction,
    /// Fixed weight on batches that contain rehearsal data; still zero on
    /// pure-new batches, where KD is undefined.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub kinds: BTreeSet<KdKind>,
    pub soft_beam_width: usize,
    pub lambda: LambdaRule,
    /// Per-KD weight overrides; absent kinds weigh 1.
    pub weights: BTreeMap<KdKind, f64>,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            kinds: BTreeSet::new(),
            soft_beam_width: 20,
            lambda: LambdaRule::SqrtFraction,
            weights: BTreeMap::new(),
        }
    }
}

impl KdConfig {
    pub fn weight(&self, kind: KdKind) -> f64 {
        self.weights.get(&kind).copied().unwrap_or(1.0)
    }
}

/// Mini-batch composition for the λ rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchComposition {
    pub b_all: usize,
    pub b_rehe: usize,
}

impl BatchComposition {
    pub fn new(b_all: usize, b_rehe: usize) -> Result<Self> {
        if b_all == 0 || b_rehe > b_all {
            return Err(Error::Usage(format!(
                "invalid batch composition: {b_rehe} rehearsal of {b_all}"
            )));
        }
        Ok(Self { b_all, b_rehe })
    }
}

/// KD weight: √(b_rehe / b_all).
pub fn lambda_kd(comp: BatchComposition) -> f64 {
    (comp.b_rehe as f64 / comp.b_all as f64).sqrt()
}

fn lambda_for(rule: LambdaRule, comp: BatchComposition) -> f64 {
    if comp.b_rehe == 0 {
        return 0.0;
    }
    match rule {
        LambdaRule::SqrtFraction => lambda_kd(comp),
        LambdaRule::Fixed(v) => v,
    }
}

/// Combine CE with the enabled KD values: (1−λ)·ce + λ·Σ w_k·L_k.
pub fn total_loss(ce: f64, kd: &BTreeMap<KdKind, f64>, lambda: f64, config: &KdConfig) -> f64 {
    let kd_sum: f64 = kd.iter().map(|(k, v)| config.weight(*k) * v).sum();
    (1.0 - lambda) * ce + lambda * kd_sum
}

/// A beam-searched teacher transcription for one exemplar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTranscript {
    /// Token ids, BOS-initiated and EOS-terminated.
    pub tokens: Vec<usize>,
    /// The decode hit the length budget and EOS was appended.
    pub truncated: bool,
}

/// Teacher-generated soft transcriptions for the current rehearsal set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SoftTranscriptStore {
    pub teacher_task: usize,
    pub beam_width: usize,
    pub entries: BTreeMap<UttId, SoftTranscript>,
}

impl SoftTranscriptStore {
    pub fn get(&self, id: UttId) -> Result<&SoftTranscript> {
        self.entries.get(&id).ok_or_else(|| {
            Error::Integrity(format!(
                "no soft transcript for exemplar {id}; buffer and store are out of sync"
            ))
        })
    }
}

/// Run teacher beam search over every rehearsal exemplar.
///
/// Hypothesis selection here is length-normalized: a partially-forgotten
/// teacher otherwise prefers degenerate one-token decodes (the summed
/// log-probability of a short sequence beats any full transcription), and
/// training the student on those wrecks it. Inference-time decoding keeps
/// the plain summed score.
pub fn generate_soft_transcripts<'a, I>(
    teacher: &TeacherSnapshot,
    exemplars: I,
    beam_width: usize,
) -> Result<SoftTranscriptStore>
where
    I: IntoIterator<Item = (UttId, &'a Tensor)>,
{
    let mut entries = BTreeMap::new();
    // leave room for the appended EOS so truncated transcripts still fit
    // the decoder's length budget
    let budget = teacher.model.config.max_target_tokens.saturating_sub(2).max(1);
    let mut opts = DecodeOptions::new(BOS_ID, EOS_ID).with_max_new(budget);
    opts.length_normalize = true;
    for (id, features) in exemplars {
        let hyp = teacher.model.beam_search(features, beam_width, opts)?;
        let mut tokens = hyp.tokens;
        let truncated = tokens.last() != Some(&EOS_ID);
        if truncated {
            tokens.push(EOS_ID);
        }
        entries.insert(id, SoftTranscript { tokens, truncated });
    }
    Ok(SoftTranscriptStore {
        teacher_task: teacher.task_index,
        beam_width,
        entries,
    })
}

/// Loss reduction: sums follow the equations literally; mean-per-token
/// keeps terms on one scale across batch compositions (the default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    MeanPerToken,
    Sum,
}

/// One training sample, already tokenized and BOS/EOS framed.
#[derive(Debug, Clone)]
pub struct TrainSample<'a> {
    pub id: UttId,
    pub features: &'a Tensor,
    pub target: Vec<usize>,
    pub rehearsal: bool,
}

struct CeTerm {
    sum: Var,
    tokens: usize,
}

/// Sum of −log p(target[j+1] | prefix ≤ j) over non-PAD positions, given
/// logits over the full target sequence.
fn sequence_ce(tape: &Tape, logits: Var, target: &[usize]) -> Result<CeTerm> {
    let rows = target.len() - 1;
    let scored = &target[1..];
    let trimmed = tape.slice_rows(logits, 0, rows)?;
    let logp = tape.log_softmax(trimmed, 1)?;
    let picked = tape.pick_per_row(logp, scored)?;
    let (masked, tokens) = if scored.contains(&PAD_ID) {
        let mask: Vec<f64> = scored
            .iter()
            .map(|&t| if t == PAD_ID { 0.0 } else { 1.0 })
            .collect();
        let count = mask.iter().filter(|&&m| m > 0.0).count();
        let m = tape.leaf(Tensor::vector(mask));
        (tape.mul(picked, m)?, count)
    } else {
        (picked, rows)
    };
    let sum = tape.scale(tape.sum_all(masked), -1.0);
    Ok(CeTerm { sum, tokens })
}

fn reduce(tape: &Tape, sum: Var, count: usize, reduction: Reduction) -> Var {
    match reduction {
        Reduction::Sum => sum,
        Reduction::MeanPerToken => {
            if count == 0 {
                sum
            } else {
                tape.scale(sum, 1.0 / count as f64)
            }
        }
    }
}

/// Rehearsal cross-entropy over a batch (current-task and rehearsal
/// samples alike). Empty batch yields a constant zero.
pub fn ce_loss(
    tape: &Tape,
    student: &BoundModel,
    batch: &[TrainSample],
    reduction: Reduction,
    mode: Mode,
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    let mut tokens = 0;
    for sample in batch {
        let logits = student.forward_teacher_forced(sample.features, &sample.target, mode)?;
        let term = sequence_ce(tape, logits, &sample.target)?;
        tokens += term.tokens;
        acc = Some(match acc {
            None => term.sum,
            Some(a) => tape.add(a, term.sum)?,
        });
    }
    Ok(match acc {
        None => tape.leaf(Tensor::scalar(0.0)),
        Some(sum) => reduce(tape, sum, tokens, reduction),
    })
}

/// Squared-distance contribution of one sample to the audio KD, given the
/// student's pooled embedding on the tape and the teacher's as a constant.
fn audio_term(tape: &Tape, student_pooled: Var, teacher_pooled: &Tensor) -> Result<Var> {
    let t = tape.leaf(teacher_pooled.clone());
    let diff = tape.sub(t, student_pooled)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.sum_all(sq))
}

/// Audio-KD: Σ over rehearsal samples of the squared Euclidean distance
/// between teacher and student mean-pooled encoder embeddings. No gradient
/// flows into the teacher.
pub fn audio_kd_loss(
    tape: &Tape,
    student: &BoundModel,
    teacher: &TeacherSnapshot,
    rehearsal: &[TrainSample],
    reduction: Reduction,
    mode: Mode,
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for sample in rehearsal {
        let pooled_s = student.encode_pooled(sample.features, mode)?;
        let pooled_t = teacher.model.pooled_embedding(sample.features)?;
        let term = audio_term(tape, pooled_s, &pooled_t)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(match acc {
        None => tape.leaf(Tensor::scalar(0.0)),
        Some(sum) => reduce(tape, sum, rehearsal.len(), reduction),
    })
}

/// Teacher next-token distributions over the ground-truth prefix:
/// softmax rows [J−1 × V].
fn teacher_token_probs(teacher: &Seq2SeqModel, sample: &TrainSample) -> Result<Tensor> {
    let logits = teacher.teacher_forced_logits(sample.features, &sample.target)?;
    let rows = sample.target.len() - 1;
    let v = teacher.config.vocab_size;
    let mut probs = vec![0.0; rows * v];
    for j in 0..rows {
        let row = &logits.data()[j * v..(j + 1) * v];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
        for (o, x) in probs[j * v..(j + 1) * v].iter_mut().zip(row) {
            *o = (x - mx).exp() / z;
        }
    }
    Tensor::new(vec![rows, v], probs)
}

/// −Σ_j Σ_v p_teacher(v) log p_student(v), both teacher-forced on the
/// ground-truth prefix; PAD positions excluded.
fn token_term(
    tape: &Tape,
    student: &BoundModel,
    teacher_probs: &Tensor,
    sample: &TrainSample,
    mode: Mode,
) -> Result<CeTerm> {
    let logits = student.forward_teacher_forced(sample.features, &sample.target, mode)?;
    let rows = sample.target.len() - 1;
    let trimmed = tape.slice_rows(logits, 0, rows)?;
    let logp = tape.log_softmax(trimmed, 1)?;
    let scored = &sample.target[1..];
    let v = student.config.vocab_size;
    let (probs, tokens) = if scored.contains(&PAD_ID) {
        let mut masked = teacher_probs.clone();
        let mut count = 0;
        for (j, &t) in scored.iter().enumerate() {
            if t == PAD_ID {
                for x in &mut masked.data_mut()[j * v..(j + 1) * v] {
                    *x = 0.0;
                }
            } else {
                count += 1;
            }
        }
        (masked, count)
    } else {
        (teacher_probs.clone(), rows)
    };
    let p = tape.leaf(probs);
    let prod = tape.mul(p, logp)?;
    let sum = tape.scale(tape.sum_all(prod), -1.0);
    Ok(CeTerm { sum, tokens })
}

/// Token-KD: cross-entropy between teacher and student per-position token
/// distributions on rehearsal samples.
pub fn token_kd_loss(
    tape: &Tape,
    student: &BoundModel,
    teacher: &TeacherSnapshot,
    rehearsal: &[TrainSample],
    reduction: Reduction,
    mode: Mode,
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    let mut tokens = 0;
    for sample in rehearsal {
        let probs = teacher_token_probs(&teacher.model, sample)?;
        let term = token_term(tape, student, &probs, sample, mode)?;
        tokens += term.tokens;
        acc = Some(match acc {
            None => term.sum,
            Some(a) => tape.add(a, term.sum)?,
        });
    }
    Ok(match acc {
        None => tape.leaf(Tensor::scalar(0.0)),
        Some(sum) => reduce(tape, sum, tokens, reduction),
    })
}

/// Seq-KD: student cross-entropy against the teacher's soft transcriptions
/// as hard targets.
pub fn seq_kd_loss(
    tape: &Tape,
    student: &BoundModel,
    store: &SoftTranscriptStore,
    rehearsal: &[TrainSample],
    reduction: Reduction,
    mode: Mode,
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    let mut tokens = 0;
    for sample in rehearsal {
        let soft = store.get(sample.id)?;
        let logits = student.forward_teacher_forced(sample.features, &soft.tokens, mode)?;
        let term = sequence_ce(tape, logits, &soft.tokens)?;
        tokens += term.tokens;
        acc = Some(match acc {
            None => term.sum,
            Some(a) => tape.add(a, term.sum)?,
        });
    }
    Ok(match acc {
        None => tape.leaf(Tensor::scalar(0.0)),
        Some(sum) => reduce(tape, sum, tokens, reduction),
    })
}

/// Teacher-side values precomputed once per task: the teacher is frozen,
/// so its pooled embeddings, token distributions, and soft transcriptions
/// for the rehearsal set are constants for the whole task.
pub struct TeacherContext {
    pub snapshot: TeacherSnapshot,
    pooled: BTreeMap<UttId, Tensor>,
    token_probs: BTreeMap<UttId, Tensor>,
    pub soft: Option<SoftTranscriptStore>,
}

impl TeacherContext {
    /// `existing_soft` short-circuits soft-transcript generation, e.g. when
    /// resuming from a persisted store; regeneration is deterministic, so
    /// both paths agree.
    pub fn prepare(
        snapshot: TeacherSnapshot,
        kd: &KdConfig,
        exemplars: &[TrainSample],
        existing_soft: Option<SoftTranscriptStore>,
    ) -> Result<Self> {
        let mut pooled = BTreeMap::new();
        let mut token_probs = BTreeMap::new();
        if kd.kinds.contains(&KdKind::Audio) {
            for s in exemplars {
                pooled.insert(s.id, snapshot.model.pooled_embedding(s.features)?);
            }
        }
        if kd.kinds.contains(&KdKind::Token) {
            for s in exemplars {
                token_probs.insert(s.id, teacher_token_probs(&snapshot.model, s)?);
            }
        }
        let soft = if kd.kinds.contains(&KdKind::Seq) {
            match existing_soft {
                Some(store) => Some(store),
                None => Some(generate_soft_transcripts(
                    &snapshot,
                    exemplars.iter().map(|s| (s.id, s.features)),
                    kd.soft_beam_width,
                )?),
            }
        } else {
            None
        };
        Ok(Self {
            snapshot,
            pooled,
            token_probs,
            soft,
        })
    }

    fn pooled(&self, id: UttId) -> Result<&Tensor> {
        self.pooled
            .get(&id)
            .ok_or_else(|| Error::Integrity(format!("no cached teacher embedding for {id}")))
    }

    fn probs(&self, id: UttId) -> Result<&Tensor> {
        self.token_probs
            .get(&id)
            .ok_or_else(|| Error::Integrity(format!("no cached teacher distribution for {id}")))
    }
}

/// Per-batch loss values, recorded for instrumentation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub kd: BTreeMap<KdKind, f64>,
    pub lambda: f64,
    pub comp: BatchComposition,
}

/// Assemble the full training objective for one mini-batch. The student's
/// encoder output is shared between CE and the KD terms of each sample.
pub fn training_loss(
    tape: &Tape,
    student: &BoundModel,
    batch: &[TrainSample],
    teacher: Option<&TeacherContext>,
    kd: &KdConfig,
    reduction: Reduction,
    mode: Mode,
) -> Result<(Var, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::Usage("cannot train on an empty batch".into()));
    }
    if !kd.kinds.is_empty() && teacher.is_none() {
        return Err(Error::Usage(
            "knowledge distillation enabled but no teacher is available".into(),
        ));
    }
    let comp = BatchComposition::new(batch.len(), batch.iter().filter(|s| s.rehearsal).count())?;

    let mut ce_sum: Option<Var> = None;
    let mut ce_tokens = 0usize;
    let mut audio_sum: Option<Var> = None;
    let mut audio_count = 0usize;
    let mut token_sum: Option<Var> = None;
    let mut token_tokens = 0usize;
    let mut seq_sum: Option<Var> = None;
    let mut seq_tokens = 0usize;

    let add_to = |acc: &mut Option<Var>, term: Var| -> Result<()> {
        *acc = Some(match acc.take() {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
        Ok(())
    };

    for sample in batch {
        let enc = student.encode(sample.features, mode)?;
        let hidden = student.decode_hidden(enc, &sample.target, mode)?;
        let logits = student.output_logits(hidden)?;
        let term = sequence_ce(tape, logits, &sample.target)?;
        ce_tokens += term.tokens;
        add_to(&mut ce_sum, term.sum)?;

        if !sample.rehearsal {
            continue;
        }
        if let Some(ctx) = teacher {
            if kd.kinds.contains(&KdKind::Audio) {
                let pooled_s = tape.mean_axis(enc, 0)?;
                let term = audio_term(tape, pooled_s, ctx.pooled(sample.id)?)?;
                audio_count += 1;
                add_to(&mut audio_sum, term)?;
            }
            if kd.kinds.contains(&KdKind::Token) {
                let rows = sample.target.len() - 1;
                let trimmed = tape.slice_rows(logits, 0, rows)?;
                let logp = tape.log_softmax(trimmed, 1)?;
                let p = tape.leaf(ctx.probs(sample.id)?.clone());
                let prod = tape.mul(p, logp)?;
                token_tokens += rows;
                add_to(&mut token_sum, tape.scale(tape.sum_all(prod), -1.0))?;
            }
            if kd.kinds.contains(&KdKind::Seq) {
                let store = ctx.soft.as_ref().ok_or_else(|| {
                    Error::Integrity("seq-KD enabled but no soft transcript store".into())
                })?;
                let soft = store.get(sample.id)?;
                let hidden2 = student.decode_hidden(enc, &soft.tokens, mode)?;
                let logits2 = student.output_logits(hidden2)?;
                let term = sequence_ce(tape, logits2, &soft.tokens)?;
                seq_tokens += term.tokens;
                add_to(&mut seq_sum, term.sum)?;
            }
        }
    }

    let ce = reduce(tape, ce_sum.expect("non-empty batch"), ce_tokens, reduction);
    let mut kd_vars: BTreeMap<KdKind, Var> = BTreeMap::new();
    if let Some(sum) = audio_sum {
        kd_vars.insert(KdKind::Audio, reduce(tape, sum, audio_count, reduction));
    }
    if let Some(sum) = token_sum {
        kd_vars.insert(KdKind::Token, reduce(tape, sum, token_tokens, reduction));
    }
    if let Some(sum) = seq_sum {
        kd_vars.insert(KdKind::Seq, reduce(tape, sum, seq_tokens, reduction));
    }

    let lambda = lambda_for(kd.lambda, comp);
    let total = if kd_vars.is_empty() || lambda == 0.0 {
        // (1−0)·ce + 0·Σ: exactly ce
        ce
    } else {
        let mut kd_combined: Option<Var> = None;
        for (kind, var) in &kd_vars {
            let weighted = tape.scale(*var, kd.weight(*kind));
            kd_combined = Some(match kd_combined {
                None => weighted,
                Some(a) => tape.add(a, weighted)?,
            });
        }
        let ce_part = tape.scale(ce, 1.0 - lambda);
        let kd_part = tape.scale(kd_combined.expect("non-empty kd"), lambda);
        tape.add(ce_part, kd_part)?
    };

    let total_value = tape.item(total);
    if !total_value.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite training loss {total_value}"
        )));
    }

    let breakdown = LossBreakdown {
        total: total_value,
        ce: tape.item(ce),
        kd: kd_vars.iter().map(|(k, v)| (*k, tape.item(*v))).collect(),
        lambda,
        comp,
    };
    Ok((total, breakdown))
}
