//! Resemblance lookup.
//!
//! [`SuperFeatureIndex`] answers "which earlier chunk shares a super-feature
//! with this one" (FirstFit). [`VectorIndex`] answers "which earlier chunk is
//! nearest by cosine similarity" by exhaustive scan.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::features::{l2_norm, Scheme, SuperFeature};
use crate::{CardError, ChunkId, Result};

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Duplicate,
    Similar,
    Unique,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub query_chunk_id: ChunkId,
    pub base_chunk_id: Option<ChunkId>,
    pub similarity_score: f64,
    pub decision: Decision,
}

impl MatchResult {
    pub fn unique(query: ChunkId) -> Self {
        MatchResult {
            query_chunk_id: query,
            base_chunk_id: None,
            similarity_score: 0.0,
            decision: Decision::Unique,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuperFeatureIndex {
    scheme: Scheme,
    tables: Vec<HashMap<u64, Vec<ChunkId>>>,
    order: Vec<(ChunkId, Vec<u64>)>,
    ids: HashSet<ChunkId>,
}

impl SuperFeatureIndex {
    pub fn new(scheme: Scheme, dims: usize) -> Self {
        SuperFeatureIndex {
            scheme,
            tables: vec![HashMap::new(); dims],
            order: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn check(&self, sf: &SuperFeature) -> Result<()> {
        if sf.scheme != self.scheme || sf.digests.len() != self.tables.len() {
            return Err(CardError::param(format!(
                "index holds {:?} x{}, query is {:?} x{}",
                self.scheme,
                self.tables.len(),
                sf.scheme,
                sf.digests.len()
            )));
        }
        Ok(())
    }

    pub fn insert(&mut self, chunk_id: ChunkId, sf: &SuperFeature) -> Result<()> {
        self.check(sf)?;
        if !self.ids.insert(chunk_id) {
            return Err(CardError::param(format!("chunk {chunk_id} already indexed")));
        }
        for (table, d) in self.tables.iter_mut().zip(&sf.digests) {
            table.entry(*d).or_default().push(chunk_id);
        }
        self.order.push((chunk_id, sf.digests.clone()));
        Ok(())
    }

    /// Chunk ids stored under `digest` in dimension `dim`, oldest first.
    pub fn candidates(&self, dim: usize, digest: u64) -> &[ChunkId] {
        self.tables
            .get(dim)
            .and_then(|t| t.get(&digest))
            .map_or(&[], Vec::as_slice)
    }

    /// Scan dimensions in order and return the first chunk stored under the
    /// query's digest.
    pub fn firstfit_lookup(&self, query: ChunkId, sf: &SuperFeature) -> Result<MatchResult> {
        self.check(sf)?;
        for (dim, d) in sf.digests.iter().enumerate() {
            if let Some(&base) = self.candidates(dim, *d).first() {
                return Ok(MatchResult {
                    query_chunk_id: query,
                    base_chunk_id: Some(base),
                    similarity_score: 1.0,
                    decision: Decision::Similar,
                });
            }
        }
        Ok(MatchResult::unique(query))
    }

    /// `chunk_id digest...` per line, digests as 16 hex digits.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (id, ds) in &self.order {
            let _ = write!(s, "{id}");
            for d in ds {
                let _ = write!(s, " {d:016x}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct StoredVector {
    pub chunk_id: ChunkId,
    pub vector: Vec<f64>,
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    threshold: f64,
    entries: Vec<StoredVector>,
    /// Unit vectors, row after row, for the scan.
    unit: Vec<f64>,
    ids: HashSet<ChunkId>,
}

impl VectorIndex {
    pub fn new(dim: usize, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(CardError::param(format!("similarity threshold {threshold} not in (0, 1]")));
        }
        Ok(VectorIndex {
            dim,
            threshold,
            entries: Vec::new(),
            unit: Vec::new(),
            ids: HashSet::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn entries(&self) -> &[StoredVector] {
        &self.entries
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(CardError::Shape(format!(
                "vector has dimension {}, index holds {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn insert(&mut self, chunk_id: ChunkId, vector: &[f64]) -> Result<()> {
        self.check_dim(vector)?;
        if !self.ids.insert(chunk_id) {
            return Err(CardError::param(format!("chunk {chunk_id} already indexed")));
        }
        let norm = l2_norm(vector);
        // A zero vector can never score above zero; store zeros so it is never chosen.
        let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        self.unit.extend(vector.iter().map(|x| x * inv));
        self.entries.push(StoredVector {
            chunk_id,
            vector: vector.to_vec(),
            norm,
        });
        Ok(())
    }

    /// Highest cosine similarity over all stored vectors; ties go to the
    /// smallest chunk id.
    pub fn nn_lookup(&self, query: ChunkId, v: &[f64]) -> Result<MatchResult> {
        self.check_dim(v)?;
        let norm = l2_norm(v);
        if norm == 0.0 {
            warn!("chunk {query}: zero-norm query vector treated as unique");
            return Ok(MatchResult::unique(query));
        }
        let mut best: Option<(f64, ChunkId)> = None;
        for (row, e) in self.unit.chunks_exact(self.dim).zip(&self.entries) {
            if e.norm == 0.0 {
                continue;
            }
            let score = row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / norm;
            let better = match best {
                None => true,
                Some((s, id)) => score > s || (score == s && e.chunk_id < id),
            };
            if better {
                best = Some((score, e.chunk_id));
            }
        }
        Ok(match best {
            Some((score, id)) => MatchResult {
                query_chunk_id: query,
                base_chunk_id: Some(id),
                similarity_score: score,
                decision: if score >= self.threshold {
                    Decision::Similar
                } else {
                    Decision::Unique
                },
            },
            None => MatchResult::unique(query),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DedupeAction {
    Duplicate(ChunkId),
    Delta(ChunkId),
    Store,
}

/// Exact identity hit first, then a resemblance match, else store.
pub fn dedupe_decide(exact_hit: Option<ChunkId>, m: &MatchResult) -> DedupeAction {
    if let Some(id) = exact_hit {
        return DedupeAction::Duplicate(id);
    }
    match (m.decision, m.base_chunk_id) {
        (Decision::Similar, Some(base)) => DedupeAction::Delta(base),
        _ => DedupeAction::Store,
    }
}
