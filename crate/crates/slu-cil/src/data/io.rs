//! Corpus persistence: line-delimited utterance records, a binary feature
//! container, and human-editable TOML corpus specs.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::{Corpus, CorpusSpec, Entity, Splits, Utterance, UttId};

const FEAT_MAGIC: &[u8; 8] = b"SLUFEAT\x01";

#[derive(Serialize, Deserialize)]
struct Record {
    id: u32,
    scenario: String,
    action: String,
    entities: Vec<Entity>,
    transcript: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    spec_hash: String,
    utterances: usize,
    splits: Splits,
}

pub fn save_corpus_spec(spec: &CorpusSpec, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(spec).map_err(|e| Error::Parse(format!("spec: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_corpus_spec(path: &Path) -> Result<CorpusSpec> {
    let text = fs::read_to_string(path)?;
    let spec: CorpusSpec =
        toml::from_str(&text).map_err(|e| Error::Parse(format!("spec {}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

/// Write `corpus.jsonl` (one record per utterance), `features.bin`, and
/// `meta.json` (spec hash + splits) under `dir`.
pub fn save_corpus_dir(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut jsonl = BufWriter::new(File::create(dir.join("corpus.jsonl"))?);
    for u in &corpus.utterances {
        let rec = Record {
            id: u.id.0,
            scenario: u.scenario.clone(),
            action: u.action.clone(),
            entities: u.entities.clone(),
            transcript: u.transcript.clone(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(jsonl, "{line}")?;
    }
    jsonl.flush()?;

    let mut feats = BufWriter::new(File::create(dir.join("features.bin"))?);
    feats.write_all(FEAT_MAGIC)?;
    feats.write_all(&(corpus.utterances.len() as u32).to_le_bytes())?;
    for u in &corpus.utterances {
        let shape = u.features.shape();
        feats.write_all(&u.id.0.to_le_bytes())?;
        feats.write_all(&(shape[0] as u32).to_le_bytes())?;
        feats.write_all(&(shape[1] as u32).to_le_bytes())?;
        for v in u.features.iter() {
            feats.write_all(&v.to_le_bytes())?;
        }
    }
    feats.flush()?;

    let meta = Meta {
        spec_hash: format!("{:016x}", corpus.spec_hash),
        utterances: corpus.utterances.len(),
        splits: corpus.splits.clone(),
    };
    fs::write(
        dir.join("meta.json"),
        serde_json::to_vec_pretty(&meta).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    Ok(())
}

pub fn load_corpus_dir(dir: &Path) -> Result<Corpus> {
    let meta: Meta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)
        .map_err(|e| Error::Parse(format!("meta.json: {e}")))?;
    let spec_hash = u64::from_str_radix(&meta.spec_hash, 16)
        .map_err(|_| Error::Parse("malformed spec hash".into()))?;

    let mut features: Vec<Option<Tensor>> = vec![None; meta.utterances];
    let mut r = BufReader::new(File::open(dir.join("features.bin"))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FEAT_MAGIC {
        return Err(Error::Parse("bad feature container magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    if count != meta.utterances {
        return Err(Error::Integrity(format!(
            "feature container holds {} utterances, meta says {}",
            count, meta.utterances
        )));
    }
    for _ in 0..count {
        r.read_exact(&mut u32buf)?;
        let id = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let frames = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        let mut data = vec![0u8; frames * dim * 8];
        r.read_exact(&mut data)?;
        let vals: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if id >= meta.utterances {
            return Err(Error::Integrity(format!("feature id {} out of range", id)));
        }
        features[id] = Some(Tensor::new(vec![frames, dim], vals)?);
    }

    let file = BufReader::new(File::open(dir.join("corpus.jsonl"))?);
    let mut utterances: Vec<Utterance> = Vec::with_capacity(meta.utterances);
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("corpus.jsonl: {e}")))?;
        let feats = features
            .get_mut(rec.id as usize)
            .and_then(|f| f.take())
            .ok_or_else(|| Error::Integrity(format!("utterance {} has no features", rec.id)))?;
        utterances.push(Utterance {
            id: UttId(rec.id),
            scenario: rec.scenario,
            action: rec.action,
            entities: rec.entities,
            transcript: rec.transcript,
            features: feats,
        });
    }
    if utterances.len() != meta.utterances {
        return Err(Error::Integrity(format!(
            "corpus.jsonl holds {} records, meta says {}",
            utterances.len(),
            meta.utterances
        )));
    }
    utterances.sort_by_key(|u| u.id);

    Ok(Corpus {
        spec_hash,
        utterances,
        splits: meta.splits,
    })
}
