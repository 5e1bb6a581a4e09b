//! Evaluation: intent accuracy, word error rate, entity F1, and their
//! continual-learning aggregations (average over cumulative evaluations
//! after each task, plus the value after the last task).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{
    decode_augmented, Corpus, Entity, ParsedOutput, UttId, Vocabulary, BOS_ID, EOS_ID,
};
use crate::error::{Error, Result};
use crate::model::{DecodeOptions, Seq2SeqModel};

/// Per-utterance evaluation outcome, derived solely from the parsed beam
/// output plus the gold annotation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: UttId,
    pub scenario: String,
    pub predicted: ParsedOutput,
    pub gold_intent: String,
    pub gold_entities: Vec<Entity>,
    pub gold_transcript: Vec<String>,
    pub intent_correct: bool,
    pub edits: usize,
    pub ref_len: usize,
    pub wer: f64,
}

/// Word-level Levenshtein distance (substitution, deletion, insertion all
/// cost one), two-row dynamic program.
pub fn edit_distance(hyp: &[String], reference: &[String]) -> usize {
    if hyp.is_empty() {
        return reference.len();
    }
    if reference.is_empty() {
        return hyp.len();
    }
    let m = reference.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut curr = vec![0usize; m + 1];
    for (i, h) in hyp.iter().enumerate() {
        curr[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let cost = usize::from(h != r);
            curr[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}

/// Word error rate: edit distance divided by reference length.
pub fn wer(hyp: &[String], reference: &[String]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Undefined("WER against an empty reference".into()));
    }
    Ok(edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

/// Fraction of records whose predicted intent token equals gold exactly.
/// Outputs without a proper separator structure count as wrong.
pub fn intent_accuracy(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Undefined("intent accuracy of an empty record set".into()));
    }
    let correct = records.iter().filter(|r| r.intent_correct).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Pooled WER over a record set: total edits over total reference words.
pub fn set_wer(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Undefined("WER of an empty record set".into()));
    }
    let edits: usize = records.iter().map(|r| r.edits).sum();
    let refs: usize = records.iter().map(|r| r.ref_len).sum();
    if refs == 0 {
        return Err(Error::Undefined("WER with no reference words".into()));
    }
    Ok(edits as f64 / refs as f64)
}

fn pair_counts(entities: &[Entity]) -> BTreeMap<(String, Vec<String>), usize> {
    let mut counts = BTreeMap::new();
    for e in entities {
        *counts
            .entry((e.entity_type.clone(), e.value.clone()))
            .or_insert(0) += 1;
    }
    counts
}

/// Micro-averaged F1 over (entity type, value) pairs with multiset
/// matching. Defined as 1.0 when neither gold nor predictions contain any
/// entity (vacuous agreement).
pub fn slu_f1(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Undefined("SLU F1 of an empty record set".into()));
    }
    let mut tp = 0usize;
    let mut pred_total = 0usize;
    let mut gold_total = 0usize;
    for r in records {
        let pred = pair_counts(&r.predicted.entities);
        let gold = pair_counts(&r.gold_entities);
        pred_total += pred.values().sum::<usize>();
        gold_total += gold.values().sum::<usize>();
        for (pair, &np) in &pred {
            if let Some(&ng) = gold.get(pair) {
                tp += np.min(ng);
            }
        }
    }
    if pred_total == 0 && gold_total == 0 {
        return Ok(1.0);
    }
    let precision = if pred_total == 0 {
        0.0
    } else {
        tp as f64 / pred_total as f64
    };
    let recall = if gold_total == 0 {
        0.0
    } else {
        tp as f64 / gold_total as f64
    };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalOptions {
    pub beam_width: usize,
    /// Compare full augmented sequences instead of the transcript portion.
    pub full_sequence_wer: bool,
    pub length_normalize: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            beam_width: 4,
            full_sequence_wer: false,
            length_normalize: true,
        }
    }
}

/// Beam-decode every id and score it against gold.
pub fn evaluate_ids(
    model: &Seq2SeqModel,
    vocab: &Vocabulary,
    corpus: &Corpus,
    ids: &[UttId],
    opts: EvalOptions,
) -> Result<Vec<EvalRecord>> {
    let mut records = Vec::with_capacity(ids.len());
    let mut decode_opts = DecodeOptions::new(BOS_ID, EOS_ID);
    decode_opts.length_normalize = opts.length_normalize;
    for &id in ids {
        let u = corpus.utterance(id);
        let hyp = model.beam_search(&u.features, opts.beam_width, decode_opts)?;
        let tokens = vocab.detokenize(vocab.unframe(&hyp.tokens));
        let parsed = decode_augmented(&tokens);
        let intent_correct = !parsed.flags.missing_separator && parsed.intent == u.intent();
        let (edits, ref_len) = if opts.full_sequence_wer {
            let gold = crate::data::encode_augmented(u)?.tokens;
            (edit_distance(&tokens, &gold), gold.len())
        } else {
            (
                edit_distance(&parsed.transcript, &u.transcript),
                u.transcript.len(),
            )
        };
        records.push(EvalRecord {
            id,
            scenario: u.scenario.clone(),
            gold_intent: u.intent(),
            gold_entities: u.entities.clone(),
            gold_transcript: u.transcript.clone(),
            intent_correct,
            edits,
            ref_len,
            wer: if ref_len > 0 {
                edits as f64 / ref_len as f64
            } else {
                0.0
            },
            predicted: parsed,
        });
    }
    Ok(records)
}

/// Lower-triangular grid: entry [t][s] is the metric on the test data of
/// scenarios seen up to task s, measured after training task t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMatrix {
    task_count: usize,
    rows: Vec<Vec<f64>>,
}

impl TaskMatrix {
    pub fn new(task_count: usize) -> Self {
        Self {
            task_count,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if self.rows.len() >= self.task_count {
            return Err(Error::Usage("matrix already complete".into()));
        }
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Usage(format!(
                "row {} must have {} entries, got {}",
                self.rows.len(),
                self.rows.len() + 1,
                row.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.task_count
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    pub fn get(&self, t: usize, s: usize) -> Option<f64> {
        self.rows.get(t).and_then(|r| r.get(s)).copied()
    }

    /// Column s = t: the cumulative evaluation right after each task.
    pub fn diagonal(&self) -> Vec<f64> {
        self.rows.iter().enumerate().map(|(t, r)| r[t]).collect()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// One matrix per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrices {
    pub acc: TaskMatrix,
    pub wer: TaskMatrix,
    pub slu_f1: TaskMatrix,
}

impl MetricMatrices {
    pub fn new(task_count: usize) -> Self {
        Self {
            acc: TaskMatrix::new(task_count),
            wer: TaskMatrix::new(task_count),
            slu_f1: TaskMatrix::new(task_count),
        }
    }
}

/// The four headline aggregates plus the final-set alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub avg_acc: f64,
    pub last_acc: f64,
    pub avg_wer: f64,
    pub avg_slu_f1: f64,
    /// WER / F1 of the final cumulative evaluation (the alternative
    /// aggregation; the averages above are the headline).
    pub final_wer: f64,
    pub final_slu_f1: f64,
    /// Accuracy trend: the diagonal of the accuracy matrix.
    pub per_task_acc: Vec<f64>,
}

/// Fold complete matrices into Avg/Last aggregates: the average runs over
/// the cumulative evaluation after each task (the diagonal).
pub fn aggregate(matrices: &MetricMatrices) -> Result<Aggregates> {
    for (m, name) in [
        (&matrices.acc, "accuracy"),
        (&matrices.wer, "wer"),
        (&matrices.slu_f1, "slu_f1"),
    ] {
        if !m.is_complete() {
            return Err(Error::Usage(format!("{name} matrix is incomplete")));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let acc_diag = matrices.acc.diagonal();
    let wer_diag = matrices.wer.diagonal();
    let f1_diag = matrices.slu_f1.diagonal();
    Ok(Aggregates {
        avg_acc: mean(&acc_diag),
        last_acc: *acc_diag.last().expect("non-empty matrix"),
        avg_wer: mean(&wer_diag),
        avg_slu_f1: mean(&f1_diag),
        final_wer: *wer_diag.last().expect("non-empty matrix"),
        final_slu_f1: *f1_diag.last().expect("non-empty matrix"),
        per_task_acc: acc_diag,
    })
}
