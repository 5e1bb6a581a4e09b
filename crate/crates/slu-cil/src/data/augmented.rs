//! Augmented-transcription codec.
//!
//! Serialization: `intent _SEP (entity_type _FILL value words)* _SEP transcript`.
//! Encoding is strict; decoding is best-effort because it must accept raw
//! model output, so malformed structure yields a partial parse plus flags
//! instead of an error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::vocab::{FILL, SEP};
use super::{Entity, Utterance};

/// The serialized token sequence, before BOS/EOS framing.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedTranscript {
    pub tokens: Vec<String>,
}

/// Best-effort parse of a (possibly malformed) augmented sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedOutput {
    /// Tokens before the first separator, joined by spaces. A well-formed
    /// output has a single intent token here.
    pub intent: String,
    pub entities: Vec<Entity>,
    pub transcript: Vec<String>,
    pub flags: ParseFlags,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseFlags {
    /// Fewer than two top-level separators were present.
    pub missing_separator: bool,
    /// Entity groups that could not be parsed and were skipped.
    pub malformed_entities: u32,
}

impl ParseFlags {
    pub fn clean(&self) -> bool {
        !self.missing_separator && self.malformed_entities == 0
    }
}

/// Serialize an utterance in the augmented order: intent, separator,
/// entity/value groups in order, separator, transcript.
pub fn encode_augmented(u: &Utterance) -> Result<AugmentedTranscript> {
    for e in &u.entities {
        if e.value.is_empty() {
            return Err(Error::Integrity(format!(
                "entity {} has an empty value",
                e.entity_type
            )));
        }
        if !contains_subsequence(&u.transcript, &e.value) {
            return Err(Error::Integrity(format!(
                "entity value {:?} absent from transcript {:?}",
                e.value, u.transcript
            )));
        }
    }
    let mut tokens = Vec::with_capacity(4 + u.transcript.len() + 3 * u.entities.len());
    tokens.push(u.intent());
    tokens.push(SEP.to_string());
    for e in &u.entities {
        tokens.push(e.entity_type.clone());
        tokens.push(FILL.to_string());
        tokens.extend(e.value.iter().cloned());
    }
    tokens.push(SEP.to_string());
    tokens.extend(u.transcript.iter().cloned());
    Ok(AugmentedTranscript { tokens })
}

/// Parse an augmented token sequence. Never fails: structure violations
/// are reported through [`ParseFlags`].
pub fn decode_augmented(tokens: &[String]) -> ParsedOutput {
    let mut out = ParsedOutput::default();
    let seps: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.as_str() == SEP)
        .map(|(i, _)| i)
        .collect();

    let (intent_end, entity_span, transcript_start) = match seps.len() {
        0 => {
            out.flags.missing_separator = true;
            (tokens.len(), None, tokens.len())
        }
        1 => {
            out.flags.missing_separator = true;
            (seps[0], None, seps[0] + 1)
        }
        _ => (seps[0], Some((seps[0] + 1, seps[1])), seps[1] + 1),
    };

    out.intent = tokens[..intent_end].join(" ");
    if let Some((lo, hi)) = entity_span {
        parse_entities(&tokens[lo..hi], &mut out);
    }
    if transcript_start <= tokens.len() {
        out.transcript = tokens[transcript_start..].to_vec();
    }
    out
}

fn parse_entities(span: &[String], out: &mut ParsedOutput) {
    let fills: Vec<usize> = span
        .iter()
        .enumerate()
        .filter(|(_, t)| t.as_str() == FILL)
        .map(|(i, _)| i)
        .collect();
    let mut consumed_upto = 0;
    for (k, &f) in fills.iter().enumerate() {
        // the token immediately before _FILL is the entity type
        if f == 0 || f < consumed_upto + 1 {
            out.flags.malformed_entities += 1;
            continue;
        }
        let ty = &span[f - 1];
        if ty.as_str() == FILL {
            out.flags.malformed_entities += 1;
            continue;
        }
        if f - 1 > consumed_upto {
            // stray tokens between the previous value and this type
            out.flags.malformed_entities += (f - 1 - consumed_upto) as u32;
        }
        // value runs to the token before the next group's type (or span end)
        let value_end = match fills.get(k + 1) {
            Some(&next) => next.saturating_sub(1).max(f + 1),
            None => span.len(),
        };
        let value: Vec<String> = span[f + 1..value_end].to_vec();
        if value.is_empty() {
            out.flags.malformed_entities += 1;
            continue;
        }
        out.entities.push(Entity {
            entity_type: ty.clone(),
            value,
        });
        consumed_upto = value_end;
    }
    if fills.is_empty() && !span.is_empty() {
        out.flags.malformed_entities += span.len() as u32;
    }
}

fn contains_subsequence(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return needle.is_empty();
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}
