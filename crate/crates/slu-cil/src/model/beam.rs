//! Beam-search decoding over the toy seq2seq model.
//!
//! Width 1 reduces to greedy decoding. Pruning ties are broken by the
//! lexicographically smaller token sequence so runs are deterministic.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

use super::{Mode, Seq2SeqModel};

/// A (partial) decode: BOS-initiated token sequence with its cumulative
/// log-probability. `finished` means the last token is EOS or the length
/// budget is exhausted.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Generated tokens: everything after BOS.
    pub fn generated(&self) -> &[usize] {
        &self.tokens[1..]
    }
}

fn better(a: &Hypothesis, b: &Hypothesis, length_normalize: bool) -> std::cmp::Ordering {
    let score = |h: &Hypothesis| {
        if length_normalize && h.tokens.len() > 1 {
            h.log_prob / (h.tokens.len() - 1) as f64
        } else {
            h.log_prob
        }
    };
    score(b)
        .partial_cmp(&score(a))
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Decoding options beyond the width itself.
#[derive(Debug, Clone, Copy)]
pub struct DecodeOptions {
    pub bos: usize,
    pub eos: usize,
    /// Cap on generated tokens (excluding BOS). Defaults to J_max − 1.
    pub max_new: Option<usize>,
    pub length_normalize: bool,
}

impl DecodeOptions {
    pub fn new(bos: usize, eos: usize) -> Self {
        Self {
            bos,
            eos,
            max_new: None,
            length_normalize: false,
        }
    }

    pub fn with_max_new(mut self, max_new: usize) -> Self {
        self.max_new = Some(max_new);
        self
    }
}

impl Seq2SeqModel {
    /// Highest-scoring finished hypothesis found with the given beam width.
    pub fn beam_search(
        &self,
        features: &Tensor,
        beam_width: usize,
        opts: DecodeOptions,
    ) -> Result<Hypothesis> {
        if beam_width < 1 {
            return Err(Error::Config("beam width must be >= 1".into()));
        }
        let max_new = opts
            .max_new
            .unwrap_or(self.config.max_target_tokens - 1)
            .min(self.config.max_target_tokens - 1);
        if max_new == 0 {
            return Err(Error::Config("decode budget must allow at least one token".into()));
        }

        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let enc = bound.encode(features, Mode::Eval)?;

        let mut beams = vec![Hypothesis {
            tokens: vec![opts.bos],
            log_prob: 0.0,
            finished: false,
        }];
        let mut finished: Vec<Hypothesis> = Vec::new();

        for _ in 0..max_new {
            if beams.iter().all(|b| b.finished) {
                break;
            }
            let mut candidates: Vec<Hypothesis> = Vec::new();
            for hyp in &beams {
                if hyp.finished {
                    candidates.push(hyp.clone());
                    continue;
                }
                let logits = bound.next_token_logits(enc, &hyp.tokens, Mode::Eval)?;
                let logp = tape.log_softmax(logits, 1)?;
                let row = tape.value(logp);
                // top-k continuations, ties to the smaller token id
                let mut order: Vec<usize> = (0..row.numel()).collect();
                order.sort_by(|&a, &b| {
                    row.data()[b]
                        .partial_cmp(&row.data()[a])
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                });
                for &tok in order.iter().take(beam_width) {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(tok);
                    let generated = tokens.len() - 1;
                    let done = tok == opts.eos || generated >= max_new;
                    let cand = Hypothesis {
                        tokens,
                        log_prob: hyp.log_prob + row.data()[tok],
                        finished: done,
                    };
                    if done {
                        finished.push(cand.clone());
                    }
                    candidates.push(cand);
                }
            }
            candidates.sort_by(|a, b| better(a, b, opts.length_normalize));
            candidates.truncate(beam_width);
            beams = candidates;
        }

        finished.sort_by(|a, b| better(a, b, opts.length_normalize));
        finished.dedup_by(|a, b| a.tokens == b.tokens);
        finished
            .into_iter()
            .next()
            .ok_or_else(|| Error::Numeric("beam search produced no finished hypothesis".into()))
    }

    /// Greedy decode: argmax token at every step.
    pub fn greedy_decode(&self, features: &Tensor, opts: DecodeOptions) -> Result<Hypothesis> {
        let max_new = opts
            .max_new
            .unwrap_or(self.config.max_target_tokens - 1)
            .min(self.config.max_target_tokens - 1);
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let enc = bound.encode(features, Mode::Eval)?;
        let mut hyp = Hypothesis {
            tokens: vec![opts.bos],
            log_prob: 0.0,
            finished: false,
        };
        while !hyp.finished {
            let logits = bound.next_token_logits(enc, &hyp.tokens, Mode::Eval)?;
            let logp = tape.log_softmax(logits, 1)?;
            let row = tape.value(logp);
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row.data()[best] {
                    best = i;
                }
            }
            hyp.tokens.push(best);
            hyp.log_prob += row.data()[best];
            hyp.finished = best == opts.eos || hyp.tokens.len() > max_new;
        }
        Ok(hyp)
    }
}
