//! Closed word-level vocabulary with fixed special-token ids.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng::fnv1a64;

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const SEP_ID: usize = 4;
pub const FILL_ID: usize = 5;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const SEP: &str = "_SEP";
pub const FILL: &str = "_FILL";

pub const SPECIALS: [&str; 6] = [PAD, BOS, EOS, UNK, SEP, FILL];

/// Token inventory: specials at ids 0..=5, then intent tokens, then all
/// remaining corpus tokens, each block sorted for determinism.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
    n_intents: usize,
}

impl Vocabulary {
    pub fn build(intents: &[String], other_tokens: &[String]) -> Self {
        let mut intents: Vec<String> = intents.to_vec();
        intents.sort();
        intents.dedup();
        let mut others: Vec<String> = other_tokens
            .iter()
            .filter(|t| !intents.contains(t) && !SPECIALS.contains(&t.as_str()))
            .cloned()
            .collect();
        others.sort();
        others.dedup();
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let n_intents = intents.len();
        tokens.extend(intents);
        tokens.extend(others);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            index,
            n_intents,
        }
    }

    /// Rebuild the token→id index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn intent_count(&self) -> usize {
        self.n_intents
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Map tokens to ids, substituting UNK for unseen tokens.
    /// Returns the ids and the number of UNK substitutions.
    pub fn tokenize(&self, words: &[String]) -> (Vec<usize>, usize) {
        let mut unks = 0;
        let ids = words
            .iter()
            .map(|w| match self.index.get(w) {
                Some(&i) => i,
                None => {
                    unks += 1;
                    UNK_ID
                }
            })
            .collect();
        (ids, unks)
    }

    pub fn detokenize(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Frame a token-id sequence with BOS/EOS for the decoder.
    pub fn frame(&self, ids: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(ids.len() + 2);
        out.push(BOS_ID);
        out.extend_from_slice(ids);
        out.push(EOS_ID);
        out
    }

    /// Strip BOS/EOS/PAD framing from a decoded sequence.
    pub fn unframe<'a>(&self, ids: &'a [usize]) -> &'a [usize] {
        let mut start = 0;
        let mut end = ids.len();
        if ids.first() == Some(&BOS_ID) {
            start = 1;
        }
        while end > start && matches!(ids[end - 1], EOS_ID | PAD_ID) {
            end -= 1;
        }
        &ids[start..end]
    }

    /// Stable hash of the full token inventory; stored in checkpoints.
    pub fn hash(&self) -> u64 {
        let joined = self.tokens.join("\x1f");
        fnv1a64(joined.as_bytes())
    }
}
