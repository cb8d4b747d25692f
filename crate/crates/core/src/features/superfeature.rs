//! Super-feature baselines: N-transform and Finesse.

use serde::{Deserialize, Serialize};

use crate::chunking::rabin::{RabinFingerprinter, DEFAULT_WINDOW};
use crate::chunking::split_subchunks;
use crate::rng::SplitMix64;
use crate::{hash_bytes, CardError, ChunkId, Result};

pub const DEFAULT_SF_SEED: u64 = 0x7375_7065_7266_6561;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    NTransform,
    Finesse,
}

impl Scheme {
    pub fn tag(self) -> u8 {
        match self {
            Scheme::NTransform => 0,
            Scheme::Finesse => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Scheme::NTransform),
            1 => Some(Scheme::Finesse),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SuperFeature {
    pub scheme: Scheme,
    pub digests: Vec<u64>,
}

impl SuperFeature {
    /// `chunk_id` (u64 LE), scheme tag, digest count, digests (u64 LE).
    pub fn to_record(&self, chunk_id: ChunkId) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 8 * self.digests.len());
        out.extend_from_slice(&chunk_id.to_le_bytes());
        out.push(self.scheme.tag());
        out.push(self.digests.len() as u8);
        for d in &self.digests {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out
    }

    /// Parse one record from the front of `bytes`; returns the bytes consumed.
    pub fn from_record(bytes: &[u8]) -> Result<(ChunkId, SuperFeature, usize)> {
        let short = |offset: usize| CardError::Format {
            offset: offset as u64,
            reason: "truncated super-feature record".into(),
        };
        if bytes.len() < 10 {
            return Err(short(bytes.len()));
        }
        let id = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let scheme = Scheme::from_tag(bytes[8]).ok_or_else(|| CardError::Format {
            offset: 8,
            reason: format!("unknown scheme tag {}", bytes[8]),
        })?;
        let n = bytes[9] as usize;
        let end = 10 + 8 * n;
        if bytes.len() < end {
            return Err(short(bytes.len()));
        }
        let digests = bytes[10..end]
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok((id, SuperFeature { scheme, digests }, end))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearTransform {
    pub multiplier: u64,
    pub addend: u64,
}

impl LinearTransform {
    #[inline]
    pub fn apply(&self, fp: u64) -> u64 {
        self.multiplier.wrapping_mul(fp).wrapping_add(self.addend)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NTransformConfig {
    pub transforms: Vec<LinearTransform>,
    pub window: usize,
    pub group_count: usize,
    pub digest_seed: u64,
}

impl NTransformConfig {
    /// `n` transforms with seeded odd multipliers and addends.
    pub fn seeded(n: usize, window: usize, group_count: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let transforms = (0..n)
            .map(|_| LinearTransform {
                multiplier: rng.next_u64() | 1,
                addend: rng.next_u64(),
            })
            .collect();
        NTransformConfig {
            transforms,
            window,
            group_count,
            digest_seed: seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.transforms.len();
        if n == 0 || self.group_count == 0 || !n.is_multiple_of(self.group_count) {
            return Err(CardError::param(format!(
                "{n} transforms cannot be split into {} equal groups",
                self.group_count
            )));
        }
        Ok(())
    }
}

impl Default for NTransformConfig {
    fn default() -> Self {
        Self::seeded(12, DEFAULT_WINDOW, 3, DEFAULT_SF_SEED)
    }
}

fn digest_values(values: &[u64], seed: u64) -> u64 {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    hash_bytes(&buf, seed)
}

/// N-transform: for each transform keep the maximum transformed fingerprint,
/// then digest consecutive groups of those maxima into super-features.
pub fn ntransform_superfeature(data: &[u8], cfg: &NTransformConfig) -> Result<SuperFeature> {
    cfg.validate()?;
    let rf = RabinFingerprinter::new(cfg.window)?;
    if data.len() < cfg.window {
        return Err(CardError::param(format!(
            "chunk of {} bytes is shorter than the {}-byte window",
            data.len(),
            cfg.window
        )));
    }
    let mut maxima = vec![0u64; cfg.transforms.len()];
    let mut first = true;
    rf.for_each(data, |fp| {
        if first {
            for (m, t) in maxima.iter_mut().zip(&cfg.transforms) {
                *m = t.apply(fp);
            }
            first = false;
        } else {
            for (m, t) in maxima.iter_mut().zip(&cfg.transforms) {
                *m = (*m).max(t.apply(fp));
            }
        }
    });
    let per_group = maxima.len() / cfg.group_count;
    Ok(SuperFeature {
        scheme: Scheme::NTransform,
        digests: maxima
            .chunks(per_group)
            .map(|g| digest_values(g, cfg.digest_seed))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinesseConfig {
    pub k_subchunks: usize,
    /// Number of super-features (also the size of each rank group).
    pub dims: usize,
    pub window: usize,
    pub digest_seed: u64,
}

impl Default for FinesseConfig {
    fn default() -> Self {
        FinesseConfig {
            k_subchunks: 12,
            dims: 3,
            window: DEFAULT_WINDOW,
            digest_seed: DEFAULT_SF_SEED,
        }
    }
}

/// Largest Rabin fingerprint of each of the `k` sub-chunks, in position order.
pub fn subchunk_maxima(data: &[u8], k: usize, window: usize) -> Result<Vec<u64>> {
    let rf = RabinFingerprinter::new(window)?;
    split_subchunks(data, k)?
        .into_iter()
        .map(|s| {
            rf.max_fingerprint(s).ok_or_else(|| {
                CardError::param(format!(
                    "sub-chunk of {} bytes is shorter than the {window}-byte window",
                    s.len()
                ))
            })
        })
        .collect()
}

/// Finesse: sub-chunk maxima are cut into position-consecutive groups of
/// `dims` values, each group is sorted descending, and super-feature `d`
/// digests the `(d + 1)`-th largest member of every group, in group order.
pub fn finesse_superfeature(data: &[u8], cfg: &FinesseConfig) -> Result<SuperFeature> {
    if cfg.dims == 0 || !cfg.k_subchunks.is_multiple_of(cfg.dims) {
        return Err(CardError::param(format!(
            "k_subchunks {} is not divisible by dims {}",
            cfg.k_subchunks, cfg.dims
        )));
    }
    let mut maxima = subchunk_maxima(data, cfg.k_subchunks, cfg.window)?;
    for group in maxima.chunks_mut(cfg.dims) {
        group.sort_unstable_by(|a, b| b.cmp(a));
    }
    let groups = cfg.k_subchunks / cfg.dims;
    let digests = (0..cfg.dims)
        .map(|d| {
            let members: Vec<u64> = (0..groups).map(|g| maxima[g * cfg.dims + d]).collect();
            digest_values(&members, cfg.digest_seed)
        })
        .collect();
    Ok(SuperFeature {
        scheme: Scheme::Finesse,
        digests,
    })
}
