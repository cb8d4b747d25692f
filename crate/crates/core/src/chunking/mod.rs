//! Content-defined chunking and sub-chunk helpers.
//!
//! Boundaries come from a gear hash (`h = (h << 1) + GEAR[byte]`) with
//! two-mask normalized chunking: before the average size a stricter mask
//! (one extra bit) is applied, after it a looser one (one bit fewer). Hashing
//! starts `min_size` bytes into each chunk, so a boundary depends only on
//! content between the previous boundary and itself.

use std::fmt::Write as _;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::{CardError, ChunkId, Digest256, Result};

pub mod rabin;

pub use rabin::RabinFingerprinter;

pub const DEFAULT_GEAR_SEED: u64 = 0x6361_7264_6765_6172;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub avg_size: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub gear_seed: u64,
}

impl ChunkingConfig {
    /// `min = avg / 4`, `max = avg * 4`.
    pub fn with_avg(avg_size: usize) -> Self {
        ChunkingConfig {
            avg_size,
            min_size: avg_size / 4,
            max_size: avg_size * 4,
            gear_seed: DEFAULT_GEAR_SEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.avg_size.is_power_of_two() || self.avg_size < 16 {
            return Err(CardError::param(format!(
                "avg_size {} must be a power of two >= 16",
                self.avg_size
            )));
        }
        if !(self.min_size < self.avg_size && self.avg_size < self.max_size) {
            return Err(CardError::param(format!(
                "need min_size < avg_size < max_size, got {} / {} / {}",
                self.min_size, self.avg_size, self.max_size
            )));
        }
        Ok(())
    }
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self::with_avg(16 * 1024)
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Chunk {
    pub chunk_id: ChunkId,
    /// Byte offset within the stream the chunk was cut from.
    pub offset: u64,
    pub identity_digest: Digest256,
    pub content: Bytes,
}

impl Chunk {
    pub fn new(chunk_id: ChunkId, offset: u64, content: Bytes) -> Self {
        Chunk {
            chunk_id,
            offset,
            identity_digest: Digest256::of(&content),
            content,
        }
    }

    pub fn len(&self) -> usize {
        self.content.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_empty()
    }

    /// `chunk_id offset length identity_digest`
    pub fn inventory_line(&self) -> String {
        format!(
            "{} {} {} {}",
            self.chunk_id,
            self.offset,
            self.len(),
            self.identity_digest
        )
    }
}

impl std::fmt::Debug for Chunk {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chunk")
            .field("chunk_id", &self.chunk_id)
            .field("offset", &self.offset)
            .field("length", &self.len())
            .field("identity_digest", &self.identity_digest)
            .finish()
    }
}

/// Newline-delimited chunk inventory.
pub fn inventory(chunks: &[Chunk]) -> String {
    let mut s = String::new();
    for c in chunks {
        let _ = writeln!(s, "{}", c.inventory_line());
    }
    s
}

/// 256 gear values drawn from SplitMix64.
pub fn gear_table(seed: u64) -> [u64; 256] {
    let mut rng = SplitMix64::new(seed);
    let mut t = [0u64; 256];
    for v in t.iter_mut() {
        *v = rng.next_u64();
    }
    t
}

/// Mask with the `bits` most significant bits set.
///
/// The top bits of a gear hash mix the most input bytes (up to 64), so the
/// cut condition `hash & mask == 0` looks at them.
pub fn top_bits_mask(bits: u32) -> u64 {
    match bits {
        0 => 0,
        64.. => u64::MAX,
        b => !0u64 << (64 - b),
    }
}

#[derive(Debug, Clone)]
pub struct Chunker {
    cfg: ChunkingConfig,
    gear: Box<[u64; 256]>,
    mask_small: u64,
    mask_large: u64,
}

impl Chunker {
    pub fn new(cfg: ChunkingConfig) -> Result<Self> {
        cfg.validate()?;
        let bits = cfg.avg_size.trailing_zeros();
        Ok(Chunker {
            cfg,
            gear: Box::new(gear_table(cfg.gear_seed)),
            mask_small: top_bits_mask(bits + 1),
            mask_large: top_bits_mask(bits - 1),
        })
    }

    pub fn config(&self) -> &ChunkingConfig {
        &self.cfg
    }

    pub fn masks(&self) -> (u64, u64) {
        (self.mask_small, self.mask_large)
    }

    pub fn gear(&self) -> &[u64; 256] {
        &self.gear
    }

    /// Length of the next chunk at the start of `data`.
    pub fn cut(&self, data: &[u8]) -> usize {
        let n = data.len();
        if n <= self.cfg.min_size {
            return n;
        }
        let end = n.min(self.cfg.max_size);
        let normal = end.min(self.cfg.avg_size);
        let mut h = 0u64;
        let mut i = self.cfg.min_size;
        while i < normal {
            h = (h << 1).wrapping_add(self.gear[data[i] as usize]);
            if h & self.mask_small == 0 {
                return i + 1;
            }
            i += 1;
        }
        while i < end {
            h = (h << 1).wrapping_add(self.gear[data[i] as usize]);
            if h & self.mask_large == 0 {
                return i + 1;
            }
            i += 1;
        }
        end
    }

    /// Chunk end offsets (exclusive) over the whole buffer.
    pub fn boundaries(&self, data: &[u8]) -> Vec<usize> {
        let mut out = Vec::with_capacity(data.len() / self.cfg.avg_size + 1);
        let mut start = 0;
        while start < data.len() {
            start += self.cut(&data[start..]);
            out.push(start);
        }
        out
    }

    /// Cut `data` into chunks numbered from `first_id`.
    pub fn chunk(&self, data: &Bytes, first_id: ChunkId) -> Vec<Chunk> {
        let mut start = 0;
        let mut out = Vec::new();
        for (id, end) in (first_id..).zip(self.boundaries(data)) {
            out.push(Chunk::new(id, start as u64, data.slice(start..end)));
            start = end;
        }
        out
    }
}

/// Chunk a whole stream with ids starting at 0.
pub fn chunk_stream(data: &Bytes, cfg: &ChunkingConfig) -> Result<Vec<Chunk>> {
    Ok(Chunker::new(*cfg)?.chunk(data, 0))
}

/// Fixed-size split into `k` spans; the last span absorbs the remainder.
pub fn split_subchunks(data: &[u8], k: usize) -> Result<Vec<&[u8]>> {
    if k == 0 {
        return Err(CardError::param("sub-chunk count must be at least 1"));
    }
    if k > data.len() {
        return Err(CardError::param(format!(
            "cannot split {} bytes into {k} sub-chunks",
            data.len()
        )));
    }
    let size = data.len() / k;
    let mut spans: Vec<&[u8]> = (0..k - 1).map(|j| &data[j * size..(j + 1) * size]).collect();
    spans.push(&data[(k - 1) * size..]);
    Ok(spans)
}

/// Rabin fingerprint of every `window`-byte position of a chunk.
pub fn rolling_fingerprints(chunk: &Chunk, window: usize) -> Result<Vec<u64>> {
    RabinFingerprinter::new(window)?.fingerprints(&chunk.content)
}
