//! Chunk-context-aware resemblance detection for deduplicating storage.
//!
//! The crate implements a delta-compressing deduplication engine with three
//! interchangeable resemblance detectors:
//!
//! - **CARD**: per-chunk shingle features ([`features::initial_feature`])
//!   embedded through a small linear context model ([`context_model`]) and
//!   matched by cosine nearest neighbour ([`index::VectorIndex`]).
//! - **Finesse** and **N-transform**: super-feature baselines
//!   ([`features::finesse_superfeature`], [`features::ntransform_superfeature`])
//!   matched FirstFit ([`index::SuperFeatureIndex`]).
//!
//! [`pipeline::run_dedupe`] ties chunking, feature extraction, training,
//! matching and [`delta`] encoding together and reports the delta compression
//! ratio (DCR). The book under `book/` walks through each stage.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

pub mod chunking;
pub mod context_model;
pub mod corpus;
pub mod delta;
pub mod error;
pub mod features;
pub mod index;
pub mod pipeline;
pub mod report;
pub mod rng;

pub use error::{CardError, Result};

/// Sequence number of a chunk within a run.
pub type ChunkId = u64;

/// A 256-bit content digest (SHA-256).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest256(pub [u8; 32]);

impl Digest256 {
    pub fn of(data: &[u8]) -> Self {
        Digest256(Sha256::digest(data).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let raw = hex::decode(s).map_err(|e| CardError::param(format!("bad hex digest: {e}")))?;
        let arr: [u8; 32] = raw
            .try_into()
            .map_err(|_| CardError::param("digest must be 32 bytes"))?;
        Ok(Digest256(arr))
    }
}

impl fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest256({})", self.to_hex())
    }
}

impl fmt::Display for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest256 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest256 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest256::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Seeded 64-bit hash of a byte string (XXH64).
#[inline]
pub(crate) fn hash_bytes(data: &[u8], seed: u64) -> u64 {
    xxhash_rust::xxh64::xxh64(data, seed)
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/chunking.md")]
    mod chunking {}
    #[doc = include_str!("../../../book/src/initial-features.md")]
    mod initial_features {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/context-model.md")]
    mod context_model {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/delta.md")]
    mod delta {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
