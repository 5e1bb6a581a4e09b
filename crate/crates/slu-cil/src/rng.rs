//! Deterministic seed derivation.
//!
//! Every stochastic decision in the crate draws from a ChaCha stream whose
//! seed is derived from the master seed plus a purpose tag. Runs are
//! therefore reproducible from (config, seed) alone and resumable at task
//! boundaries without serializing generator state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over a byte slice; stable across platforms.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a master seed and a purpose tag.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + tag.len());
    buf.extend_from_slice(&master.to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    fnv1a64(&buf)
}

/// Derive a child seed further qualified by indices (task, epoch, ...).
pub fn derive_seed_n(master: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(8 + tag.len() + indices.len() * 8);
    buf.extend_from_slice(&master.to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    for ix in indices {
        buf.extend_from_slice(&ix.to_le_bytes());
    }
    fnv1a64(&buf)
}

/// A fresh generator for the given derived seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
