//! Versioned checkpoint container: JSON header (config, vocabulary hash,
//! parameter index) followed by raw little-endian f64 parameter data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ModelConfig, Seq2SeqModel};

const MAGIC: &[u8; 8] = b"SLUCKPT\x01";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    vocab_hash: String,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(model: &Seq2SeqModel, vocab_hash: u64, path: &Path) -> Result<()> {
    let header = Header {
        version: VERSION,
        config: model.config.clone(),
        vocab_hash: format!("{:016x}", vocab_hash),
        params: model
            .param_names()
            .iter()
            .zip(model.params())
            .map(|(name, p)| ParamEntry {
                name: name.clone(),
                shape: p.shape().to_vec(),
            })
            .collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for p in model.params() {
        for v in p.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint. When `expected_vocab_hash` is given, a mismatch is an
/// integrity error. Returns the model and the stored vocabulary hash.
pub fn load_checkpoint(
    path: &Path,
    expected_vocab_hash: Option<u64>,
) -> Result<(Seq2SeqModel, u64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a checkpoint file (bad magic)".into()));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Parse(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let vocab_hash = u64::from_str_radix(&header.vocab_hash, 16)
        .map_err(|_| Error::Parse("malformed vocab hash".into()))?;
    if let Some(expected) = expected_vocab_hash {
        if expected != vocab_hash {
            return Err(Error::Integrity(format!(
                "vocabulary hash mismatch: checkpoint {:016x}, expected {:016x}",
                vocab_hash, expected
            )));
        }
    }

    let mut model = Seq2SeqModel::init(&header.config, 0)?;
    if header.params.len() != model.params().len() {
        return Err(Error::Integrity(format!(
            "checkpoint holds {} parameters, config implies {}",
            header.params.len(),
            model.params().len()
        )));
    }
    for (i, entry) in header.params.iter().enumerate() {
        if entry.name != model.param_names()[i] || entry.shape != model.params()[i].shape() {
            return Err(Error::Integrity(format!(
                "parameter {} mismatch: {} {:?} vs {} {:?}",
                i,
                entry.name,
                entry.shape,
                model.param_names()[i],
                model.params()[i].shape()
            )));
        }
        let n: usize = entry.shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = model.params_mut()[i].data_mut();
        for (j, chunk) in buf.chunks_exact(8).enumerate() {
            data[j] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok((model, vocab_hash))
}
