//! Per-chunk features.
//!
//! The CARD initial feature turns a chunk into an M-dimensional real vector
//! built from *shingles*: runs of consecutive sub-chunk digests. Two chunks
//! that share long stretches of content share sub-chunk digests, hence
//! shingles, hence a large part of their averaged vectors.
//!
//! The baselines ([`superfeature`]) reduce a chunk to a handful of 64-bit
//! super-features compared by exact equality.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::chunking::{split_subchunks, Chunk};
use crate::rng::{mix64, GOLDEN_GAMMA};
use crate::{hash_bytes, CardError, ChunkId, Result};

pub mod superfeature;

pub use superfeature::{
    finesse_superfeature, ntransform_superfeature, FinesseConfig, NTransformConfig, Scheme,
    SuperFeature,
};

pub const DEFAULT_HASH_FAMILY_SEED: u64 = 0x6869_6e67_6c65_7331;

/// Gram length of [`lsh_digest`].
pub const LSH_GRAM: usize = 4;

pub const LSH_GRAM_SALT: u64 = 0x5bd1_e995_7f4a_7c15;
pub const LSH_OUTPUT_SALT: u64 = 0x2545_f491_4f6c_dd1d;

/// Byte placed between digests inside a shingle string.
pub const SHINGLE_SEPARATOR: u8 = b'|';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Number of fixed-size sub-chunks per chunk.
    pub k_subchunks: usize,
    /// Largest shingle order; order `r` shingles span `2r + 1` sub-chunks.
    pub shingle_order: usize,
    /// Vector dimension.
    pub dim_m: usize,
    pub hash_family_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            k_subchunks: 32,
            shingle_order: 2,
            dim_m: 50,
            hash_family_seed: DEFAULT_HASH_FAMILY_SEED,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim_m == 0 || self.k_subchunks == 0 || self.shingle_order == 0 {
            return Err(CardError::param(
                "k_subchunks, shingle_order and dim_m must all be positive",
            ));
        }
        if self.shingle_order >= self.k_subchunks {
            return Err(CardError::param(format!(
                "shingle_order {} must be below k_subchunks {}",
                self.shingle_order, self.k_subchunks
            )));
        }
        Ok(())
    }

    pub fn hash_family(&self) -> HashFamily {
        HashFamily::new(self.hash_family_seed, self.dim_m)
    }
}

/// `dim` seeded hash functions mapping byte strings into `[-1, 1)`.
///
/// `hf_i(x)` is the `(i + 1)`-th SplitMix64 output seeded with
/// `xxh64(x, seed)`, read as a signed integer and scaled by `2^-63`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashFamily {
    seed: u64,
    dim: usize,
}

const I64_SCALE: f64 = 1.0 / 9_223_372_036_854_775_808.0;

impl HashFamily {
    pub fn new(seed: u64, dim: usize) -> Self {
        HashFamily { seed, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hf(&self, i: usize, x: &[u8]) -> f64 {
        let base = hash_bytes(x, self.seed);
        to_unit(mix64(base.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN_GAMMA))))
    }

    /// `(hf_0(x), .., hf_{dim-1}(x))`.
    pub fn eval_into(&self, x: &[u8], out: &mut [f64]) {
        let mut state = hash_bytes(x, self.seed);
        for v in out.iter_mut().take(self.dim) {
            state = state.wrapping_add(GOLDEN_GAMMA);
            *v = to_unit(mix64(state));
        }
    }

    pub fn eval(&self, x: &[u8]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        self.eval_into(x, &mut v);
        v
    }
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x as i64) as f64 * I64_SCALE
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialFeature {
    pub chunk_id: ChunkId,
    pub vector: Vec<f64>,
}

impl InitialFeature {
    pub fn norm(&self) -> f64 {
        l2_norm(&self.vector)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Similarity-preserving 64-bit digest of a byte span.
///
/// A one-permutation MinHash over the span's overlapping 4-byte grams: each
/// gram is hashed, the minimum is kept, and the minimum is passed through a
/// bijective mixer. Two spans produce the same digest with probability equal
/// to the Jaccard similarity of their gram sets; otherwise the digests are
/// unrelated 64-bit values. Spans shorter than one gram hash as a single
/// zero-padded gram tagged with their length.
pub fn lsh_digest(span: &[u8]) -> Result<u64> {
    if span.is_empty() {
        return Err(CardError::param("lsh_digest needs a non-empty span"));
    }
    let min = if span.len() < LSH_GRAM {
        let mut buf = [0u8; 8];
        buf[..span.len()].copy_from_slice(span);
        buf[7] = span.len() as u8;
        mix64(u64::from_le_bytes(buf) ^ LSH_GRAM_SALT)
    } else {
        span.windows(LSH_GRAM)
            .map(|w| {
                let g = u32::from_le_bytes([w[0], w[1], w[2], w[3]]) as u64;
                mix64(g ^ LSH_GRAM_SALT)
            })
            .min()
            .expect("at least one gram")
    };
    Ok(mix64(min ^ LSH_OUTPUT_SALT))
}

/// Sub-chunk digests of a chunk, in order.
pub fn subchunk_digests(data: &[u8], k: usize) -> Result<Vec<u64>> {
    split_subchunks(data, k)?.into_iter().map(lsh_digest).collect()
}

/// Encode consecutive digests as one shingle string.
pub fn encode_shingle(digests: &[u64]) -> Vec<u8> {
    let mut s = Vec::with_capacity(digests.len() * 9);
    for (i, d) in digests.iter().enumerate() {
        if i > 0 {
            s.push(SHINGLE_SEPARATOR);
        }
        s.extend_from_slice(&d.to_be_bytes());
    }
    s
}

/// The unique-shingle set of a digest sequence, in first-seen order.
///
/// For every order `r` in `1..=max_order`, each full window of
/// `min(2r + 1, len)` consecutive digests becomes one shingle.
pub fn shingle_set(digests: &[u64], max_order: usize) -> Vec<Vec<u8>> {
    let k = digests.len();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in 1..=max_order {
        let width = (2 * r + 1).min(k);
        for start in 0..=(k - width) {
            let s = encode_shingle(&digests[start..start + width]);
            if seen.insert(s.clone()) {
                out.push(s);
            }
        }
    }
    out
}

/// Average of the norm-normalised hash-family images of `shingles`.
pub fn embed_shingles(shingles: &[Vec<u8>], family: &HashFamily) -> Vec<f64> {
    let m = family.dim();
    let mut acc = vec![0.0; m];
    let mut sub = vec![0.0; m];
    for s in shingles {
        family.eval_into(s, &mut sub);
        let n = l2_norm(&sub);
        if n > 0.0 {
            for (a, x) in acc.iter_mut().zip(&sub) {
                *a += x / n;
            }
        }
    }
    if !shingles.is_empty() {
        let inv = 1.0 / shingles.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    acc
}

/// Initial feature vector of raw chunk bytes.
pub fn initial_vector(data: &[u8], cfg: &FeatureConfig, family: &HashFamily) -> Result<Vec<f64>> {
    cfg.validate()?;
    if family.dim() != cfg.dim_m {
        return Err(CardError::Shape(format!(
            "hash family has {} functions, config wants {}",
            family.dim(),
            cfg.dim_m
        )));
    }
    if data.len() < cfg.k_subchunks {
        return Err(CardError::param(format!(
            "chunk of {} bytes is shorter than k_subchunks = {}",
            data.len(),
            cfg.k_subchunks
        )));
    }
    let digests = subchunk_digests(data, cfg.k_subchunks)?;
    let shingles = shingle_set(&digests, cfg.shingle_order);
    Ok(embed_shingles(&shingles, family))
}

pub fn initial_feature(chunk: &Chunk, cfg: &FeatureConfig, family: &HashFamily) -> Result<InitialFeature> {
    Ok(InitialFeature {
        chunk_id: chunk.chunk_id,
        vector: initial_vector(&chunk.content, cfg, family)?,
    })
}

/// Binary records: `chunk_id` (u64 LE) then the vector as f64 LE.
pub fn encode_feature_records(features: &[InitialFeature]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in features {
        out.extend_from_slice(&f.chunk_id.to_le_bytes());
        for x in &f.vector {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_feature_records(bytes: &[u8], dim: usize) -> Result<Vec<InitialFeature>> {
    let rec = 8 + 8 * dim;
    if !bytes.len().is_multiple_of(rec) {
        return Err(CardError::Format {
            offset: (bytes.len() - bytes.len() % rec) as u64,
            reason: format!("trailing partial record (record size {rec})"),
        });
    }
    Ok(bytes
        .chunks_exact(rec)
        .map(|r| InitialFeature {
            chunk_id: u64::from_le_bytes(r[..8].try_into().unwrap()),
            vector: r[8..]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        })
        .collect())
}
