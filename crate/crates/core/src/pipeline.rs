//! End-to-end deduplication runs.
//!
//! A run chunks every file of every version, extracts the detector's feature
//! per chunk, (for CARD) trains the context model on the first version and
//! predicts context-aware features for all chunks, then walks the chunks in
//! stream order: an exact identity hit is a duplicate, a resemblance match is
//! delta-encoded against its base, anything else is stored whole.
//!
//! The result is a [`ChunkStore`] (unique chunk bytes, patches and one 64-byte
//! record per chunk) plus a [`DedupReport`].

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use bytes::Bytes;
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chunking::{Chunk, Chunker, ChunkingConfig};
use crate::context_model::{self, build_samples, ContextModel, ModelConfig, TrainOutcome};
use crate::corpus::Corpus;
use crate::delta::{delta_decode, delta_encode, DeltaPatch};
use crate::features::{
    finesse_superfeature, initial_vector, ntransform_superfeature, FeatureConfig, FinesseConfig, HashFamily,
    InitialFeature, NTransformConfig, Scheme, SuperFeature,
};
use crate::index::{dedupe_decide, DedupeAction, MatchResult, SuperFeatureIndex, VectorIndex, DEFAULT_SIMILARITY_THRESHOLD};
use crate::report::{DedupReport, PhaseTimings};
use crate::{CardError, ChunkId, Digest256, Result};

pub use crate::report::compute_dcr;

/// Bytes of metadata charged per chunk (one [`IndexRecord`]).
pub const METADATA_BYTES_PER_CHUNK: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Detector {
    Card,
    Finesse,
    NTransform,
    None,
}

impl Detector {
    pub fn name(self) -> &'static str {
        match self {
            Detector::Card => "card",
            Detector::Finesse => "finesse",
            Detector::NTransform => "ntransform",
            Detector::None => "none",
        }
    }
}

impl FromStr for Detector {
    type Err = CardError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "card" => Ok(Detector::Card),
            "finesse" => Ok(Detector::Finesse),
            "ntransform" => Ok(Detector::NTransform),
            "none" => Ok(Detector::None),
            _ => Err(CardError::param(format!("unknown detector {s:?}"))),
        }
    }
}

/// How CARD turns an initial feature into the vector it indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Embedding {
    /// `2K · v · U⁺`.
    #[default]
    Inverse,
    /// The first-layer image `v · W`.
    Hidden,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub detector: Detector,
    pub chunking: ChunkingConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub finesse: FinesseConfig,
    pub ntransform: NTransformConfig,
    pub threshold: f64,
    /// Pre-trained model; CARD trains on the first version when absent.
    pub model_path: Option<PathBuf>,
    pub embedding: Embedding,
    /// Decode every patch before counting it.
    pub verify: bool,
    /// Sequential execution and zeroed timings.
    pub deterministic: bool,
    /// Write `chunks.bin`, `patches.bin`, `index.bin` and `recipes.json` here.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            detector: Detector::Card,
            chunking: ChunkingConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            finesse: FinesseConfig::default(),
            ntransform: NTransformConfig::default(),
            threshold: DEFAULT_SIMILARITY_THRESHOLD,
            model_path: None,
            embedding: Embedding::Inverse,
            verify: true,
            deterministic: false,
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Set the feature dimension (M) and hidden dimension (D) together.
    pub fn with_dimension(mut self, dim: usize) -> Self {
        self.features.dim_m = dim;
        self.model.dim_m = dim;
        self.model.dim_d = dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.chunking.validate()?;
        if self.detector == Detector::Card {
            self.features.validate()?;
            self.model.validate()?;
            if self.features.dim_m != self.model.dim_m {
                return Err(CardError::Shape(format!(
                    "feature dimension {} differs from model input dimension {}",
                    self.features.dim_m, self.model.dim_m
                )));
            }
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(CardError::param(format!("threshold {} not in (0, 1]", self.threshold)));
        }
        Ok(())
    }
}

/// One version of a corpus held in memory.
#[derive(Debug, Clone)]
pub struct VersionData {
    pub tag: String,
    pub files: Vec<(String, Bytes)>,
}

impl VersionData {
    pub fn new(tag: impl Into<String>, files: Vec<(String, Bytes)>) -> Self {
        VersionData {
            tag: tag.into(),
            files,
        }
    }

    pub fn load(corpus: &Corpus) -> Result<Self> {
        Ok(VersionData::new(corpus.manifest.version_tag.clone(), corpus.read_files()?))
    }

    pub fn total_bytes(&self) -> u64 {
        self.files.iter().map(|(_, b)| b.len() as u64).sum()
    }
}

/// Where a file's chunks sit in the run's chunk sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecipe {
    pub version: String,
    pub path: String,
    pub first_chunk: ChunkId,
    pub chunk_count: u64,
    pub size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordKind {
    Unique = 0,
    Similar = 1,
    Duplicate = 2,
}

impl RecordKind {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(RecordKind::Unique),
            1 => Some(RecordKind::Similar),
            2 => Some(RecordKind::Duplicate),
            _ => None,
        }
    }
}

/// One 64-byte entry of `index.bin`.
///
/// Layout: identity digest (32), chunk id (u64), reference chunk id (u64,
/// `u64::MAX` for none), payload offset (u64), payload length (u32), kind
/// (u8), 3 zero bytes. Integers little-endian. The payload lives in
/// `chunks.bin` for unique chunks and in `patches.bin` for similar ones;
/// duplicates have none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexRecord {
    pub digest: Digest256,
    pub chunk_id: ChunkId,
    pub reference: Option<ChunkId>,
    pub payload_offset: u64,
    pub payload_len: u32,
    pub kind: RecordKind,
}

impl IndexRecord {
    pub const SIZE: usize = 64;

    pub fn to_bytes(&self) -> [u8; 64] {
        let mut b = [0u8; 64];
        b[..32].copy_from_slice(&self.digest.0);
        b[32..40].copy_from_slice(&self.chunk_id.to_le_bytes());
        b[40..48].copy_from_slice(&self.reference.unwrap_or(u64::MAX).to_le_bytes());
        b[48..56].copy_from_slice(&self.payload_offset.to_le_bytes());
        b[56..60].copy_from_slice(&self.payload_len.to_le_bytes());
        b[60] = self.kind as u8;
        b
    }

    pub fn from_bytes(b: &[u8], offset: u64) -> Result<Self> {
        let fmt = |reason: &str| CardError::Format {
            offset,
            reason: reason.into(),
        };
        if b.len() != Self::SIZE {
            return Err(fmt("index record is not 64 bytes"));
        }
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        let reference = match u64_at(40) {
            u64::MAX => None,
            r => Some(r),
        };
        let kind = RecordKind::from_u8(b[60]).ok_or_else(|| fmt("unknown record kind"))?;
        Ok(IndexRecord {
            digest: Digest256(b[..32].try_into().unwrap()),
            chunk_id: u64_at(32),
            reference,
            payload_offset: u64_at(48),
            payload_len: u32::from_le_bytes(b[56..60].try_into().unwrap()),
            kind,
        })
    }
}

/// Everything a run keeps: enough to rebuild every input file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChunkStore {
    pub records: Vec<IndexRecord>,
    pub chunks: Vec<u8>,
    pub patches: Vec<u8>,
    pub recipes: Vec<FileRecipe>,
}

impl ChunkStore {
    pub fn index_bytes(&self) -> Vec<u8> {
        self.records.iter().flat_map(|r| r.to_bytes()).collect()
    }

    /// `chunks.bin + patches.bin + index.bin`.
    pub fn stored_bytes(&self) -> u64 {
        (self.chunks.len() + self.patches.len() + self.records.len() * IndexRecord::SIZE) as u64
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CardError::io(dir, e))?;
        let write = |name: &str, data: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, data).map_err(|e| CardError::io(&p, e))
        };
        write("chunks.bin", &self.chunks)?;
        write("patches.bin", &self.patches)?;
        write("index.bin", &self.index_bytes())?;
        write("recipes.json", (serde_json::to_string_pretty(&self.recipes)? + "\n").as_bytes())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| CardError::io(&p, e))
        };
        let index = read("index.bin")?;
        if index.len() % IndexRecord::SIZE != 0 {
            return Err(CardError::Format {
                offset: (index.len() - index.len() % IndexRecord::SIZE) as u64,
                reason: "index.bin ends with a partial record".into(),
            });
        }
        let records = index
            .chunks_exact(IndexRecord::SIZE)
            .enumerate()
            .map(|(i, r)| IndexRecord::from_bytes(r, (i * IndexRecord::SIZE) as u64))
            .collect::<Result<_>>()?;
        Ok(ChunkStore {
            records,
            chunks: read("chunks.bin")?,
            patches: read("patches.bin")?,
            recipes: serde_json::from_slice(&read("recipes.json")?)?,
        })
    }

    fn record(&self, id: ChunkId) -> Result<&IndexRecord> {
        self.records
            .get(id as usize)
            .filter(|r| r.chunk_id == id)
            .ok_or_else(|| CardError::Corruption {
                chunk_id: id,
                reason: "no index record".into(),
            })
    }

    fn payload<'a>(blob: &'a [u8], r: &IndexRecord) -> Result<&'a [u8]> {
        let start = r.payload_offset as usize;
        blob.get(start..start + r.payload_len as usize).ok_or_else(|| CardError::Corruption {
            chunk_id: r.chunk_id,
            reason: "payload range outside its blob".into(),
        })
    }

    /// Rebuild one chunk, following duplicate and delta references.
    pub fn reconstruct_chunk(&self, id: ChunkId, cache: &mut HashMap<ChunkId, Bytes>) -> Result<Bytes> {
        if let Some(b) = cache.get(&id) {
            return Ok(b.clone());
        }
        let r = *self.record(id)?;
        let reference = || {
            r.reference.filter(|&b| b < id).ok_or_else(|| CardError::Corruption {
                chunk_id: id,
                reason: "missing or forward reference".into(),
            })
        };
        let data = match r.kind {
            RecordKind::Unique => Bytes::copy_from_slice(Self::payload(&self.chunks, &r)?),
            RecordKind::Duplicate => self.reconstruct_chunk(reference()?, cache)?,
            RecordKind::Similar => {
                let base = self.reconstruct_chunk(reference()?, cache)?;
                let patch = DeltaPatch::from_bytes(Self::payload(&self.patches, &r)?)?;
                Bytes::from(delta_decode(&patch, &base)?)
            }
        };
        if Digest256::of(&data) != r.digest {
            return Err(CardError::Corruption {
                chunk_id: id,
                reason: "reconstructed bytes do not match the identity digest".into(),
            });
        }
        cache.insert(id, data.clone());
        Ok(data)
    }

    /// Rebuild every file; `(version, path, bytes)` in recipe order.
    pub fn reconstruct_all(&self) -> Result<Vec<(String, String, Vec<u8>)>> {
        let mut cache = HashMap::new();
        self.recipes
            .iter()
            .map(|rec| {
                let mut out = Vec::with_capacity(rec.size as usize);
                for id in rec.first_chunk..rec.first_chunk + rec.chunk_count {
                    out.extend_from_slice(&self.reconstruct_chunk(id, &mut cache)?);
                }
                Ok((rec.version.clone(), rec.path.clone(), out))
            })
            .collect()
    }

    /// Byte-compare every reconstructed file with the original versions.
    pub fn verify_against(&self, versions: &[VersionData]) -> Result<u64> {
        let originals: HashMap<(&str, &str), &Bytes> = versions
            .iter()
            .flat_map(|v| v.files.iter().map(move |(p, b)| ((v.tag.as_str(), p.as_str()), b)))
            .collect();
        if originals.len() != self.recipes.len() {
            return Err(CardError::Corruption {
                chunk_id: 0,
                reason: format!("{} files in the input, {} in the store", originals.len(), self.recipes.len()),
            });
        }
        let mut verified = 0;
        for (version, path, data) in self.reconstruct_all()? {
            let orig = originals.get(&(version.as_str(), path.as_str())).ok_or_else(|| CardError::Corruption {
                chunk_id: 0,
                reason: format!("{version}/{path} is not an input file"),
            })?;
            if data != orig.as_ref() {
                let rec = self.recipes.iter().find(|r| r.version == version && r.path == path).unwrap();
                return Err(CardError::Corruption {
                    chunk_id: rec.first_chunk,
                    reason: format!("{version}/{path} does not reconstruct"),
                });
            }
            verified += data.len() as u64;
        }
        Ok(verified)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: DedupReport,
    pub store: ChunkStore,
    pub training: Option<TrainOutcome>,
}

enum Feature {
    Vector(Vec<f64>),
    Super(SuperFeature),
}

struct Timer {
    enabled: bool,
}

impl Timer {
    fn time<T>(&self, slot: &mut f64, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        if self.enabled {
            *slot += start.elapsed().as_secs_f64();
        }
        out
    }
}

/// Chunk every file of every version; ids run across the whole input.
pub fn chunk_versions(versions: &[VersionData], cfg: &ChunkingConfig, parallel: bool) -> Result<(Vec<Vec<Chunk>>, Vec<FileRecipe>)> {
    let chunker = Chunker::new(*cfg)?;
    let files: Vec<(&str, &str, &Bytes)> = versions
        .iter()
        .flat_map(|v| v.files.iter().map(move |(p, b)| (v.tag.as_str(), p.as_str(), b)))
        .collect();
    let bounds: Vec<Vec<usize>> = if parallel {
        files.par_iter().map(|(_, _, b)| chunker.boundaries(b)).collect()
    } else {
        files.iter().map(|(_, _, b)| chunker.boundaries(b)).collect()
    };
    let mut out: Vec<Vec<Chunk>> = versions.iter().map(|_| Vec::new()).collect();
    let mut recipes = Vec::with_capacity(files.len());
    let mut next_id: ChunkId = 0;
    let mut fi = 0;
    for (vi, v) in versions.iter().enumerate() {
        for (path, data) in &v.files {
            let first = next_id;
            let mut start = 0;
            for &end in &bounds[fi] {
                out[vi].push(Chunk::new(next_id, start as u64, data.slice(start..end)));
                next_id += 1;
                start = end;
            }
            recipes.push(FileRecipe {
                version: v.tag.clone(),
                path: path.clone(),
                first_chunk: first,
                chunk_count: next_id - first,
                size: data.len() as u64,
            });
            fi += 1;
        }
    }
    Ok((out, recipes))
}

fn map_chunks<T: Send>(chunks: &[Chunk], parallel: bool, f: impl Fn(&Chunk) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        chunks.par_iter().map(f).collect()
    } else {
        chunks.iter().map(f).collect()
    }
}

/// Initial features of the chunks long enough to have one.
pub fn extract_initial_features(chunks: &[Chunk], cfg: &FeatureConfig, parallel: bool) -> Vec<Option<InitialFeature>> {
    let family = HashFamily::new(cfg.hash_family_seed, cfg.dim_m);
    map_chunks(chunks, parallel, |c| {
        initial_vector(&c.content, cfg, &family).ok().map(|vector| InitialFeature {
            chunk_id: c.chunk_id,
            vector,
        })
    })
}

/// Train the context model on one version's chunks in stream order.
pub fn train_on_chunks(chunks: &[Chunk], features: &FeatureConfig, model: ModelConfig, parallel: bool) -> Result<TrainOutcome> {
    let feats: Vec<InitialFeature> = extract_initial_features(chunks, features, parallel).into_iter().flatten().collect();
    let samples = build_samples(&feats, model.context_k, model.pad_boundaries)?;
    info!("training on {} samples", samples.len());
    context_model::train(&samples, ModelConfig { parallel, ..model })
}

/// Chunk one version, train, and save the model.
pub fn run_train(cfg: &RunConfig, version: &VersionData, model_path: &Path) -> Result<TrainOutcome> {
    cfg.features.validate()?;
    let parallel = !cfg.deterministic;
    let (chunks, _) = chunk_versions(std::slice::from_ref(version), &cfg.chunking, parallel)?;
    let out = train_on_chunks(&chunks[0], &cfg.features, cfg.model, parallel)?;
    out.model.save(model_path)?;
    Ok(out)
}

enum Index {
    Vector(VectorIndex),
    Super(SuperFeatureIndex),
    Nothing,
}

/// One full run over `versions`, in order.
pub fn run_dedupe(cfg: &RunConfig, versions: &[VersionData]) -> Result<RunOutput> {
    cfg.validate()?;
    let parallel = !cfg.deterministic;
    let timer = Timer {
        enabled: !cfg.deterministic,
    };
    let mut t = PhaseTimings::default();

    let (chunks, recipes) = timer.time(&mut t.chunking, || chunk_versions(versions, &cfg.chunking, parallel))?;
    let all: Vec<&Chunk> = chunks.iter().flatten().collect();

    let mut training = None;
    let mut dimension = 0;
    let features: Vec<Option<Feature>> = match cfg.detector {
        Detector::Card => {
            let initial: Vec<Vec<Option<InitialFeature>>> = timer.time(&mut t.feature, || {
                chunks.iter().map(|v| extract_initial_features(v, &cfg.features, parallel)).collect()
            });
            let model = match &cfg.model_path {
                Some(p) => ContextModel::load(p)?,
                None => {
                    let first = chunks.first().map(Vec::as_slice).unwrap_or(&[]);
                    let out = timer.time(&mut t.train, || -> Result<TrainOutcome> {
                        let feats: Vec<InitialFeature> = initial.first().into_iter().flatten().flatten().cloned().collect();
                        let samples = build_samples(&feats, cfg.model.context_k, cfg.model.pad_boundaries)?;
                        info!("training on {} samples from {} chunks", samples.len(), first.len());
                        context_model::train(&samples, ModelConfig { parallel, ..cfg.model })
                    })?;
                    let m = out.model.clone();
                    training = Some(out);
                    m
                }
            };
            if model.cfg.dim_m != cfg.features.dim_m {
                return Err(CardError::Shape(format!(
                    "model expects {}-dimensional features, run extracts {}",
                    model.cfg.dim_m, cfg.features.dim_m
                )));
            }
            dimension = model.cfg.dim_d;
            let flat: Vec<Option<InitialFeature>> = initial.into_iter().flatten().collect();
            timer.time(&mut t.feature, || {
                let embed = |f: &Option<InitialFeature>| {
                    f.as_ref().map(|f| {
                        let v = match cfg.embedding {
                            Embedding::Inverse => model.predict(&f.vector),
                            Embedding::Hidden => model.hidden_of(&f.vector),
                        };
                        Feature::Vector(v.expect("dimensions checked"))
                    })
                };
                if parallel {
                    flat.par_iter().map(embed).collect()
                } else {
                    flat.iter().map(embed).collect()
                }
            })
        }
        Detector::Finesse => timer.time(&mut t.feature, || {
            let owned: Vec<Chunk> = all.iter().map(|c| (*c).clone()).collect();
            map_chunks(&owned, parallel, |c| finesse_superfeature(&c.content, &cfg.finesse).ok().map(Feature::Super))
        }),
        Detector::NTransform => timer.time(&mut t.feature, || {
            let owned: Vec<Chunk> = all.iter().map(|c| (*c).clone()).collect();
            map_chunks(&owned, parallel, |c| ntransform_superfeature(&c.content, &cfg.ntransform).ok().map(Feature::Super))
        }),
        Detector::None => all.iter().map(|_| None).collect(),
    };

    let mut index = match cfg.detector {
        Detector::Card => Index::Vector(VectorIndex::new(dimension, cfg.threshold)?),
        Detector::Finesse => Index::Super(SuperFeatureIndex::new(Scheme::Finesse, cfg.finesse.dims)),
        Detector::NTransform => Index::Super(SuperFeatureIndex::new(Scheme::NTransform, cfg.ntransform.group_count)),
        Detector::None => Index::Nothing,
    };

    let mut store = ChunkStore {
        recipes,
        ..ChunkStore::default()
    };
    let mut by_digest: HashMap<Digest256, ChunkId> = HashMap::new();
    let mut contents: HashMap<ChunkId, Bytes> = HashMap::new();
    let (mut dup, mut sim, mut uniq) = (0u64, 0u64, 0u64);
    let mut bytes_before = 0u64;

    for (chunk, feature) in all.iter().zip(&features) {
        bytes_before += chunk.len() as u64;
        let exact = by_digest.get(&chunk.identity_digest).copied();
        let m = if exact.is_some() {
            MatchResult::unique(chunk.chunk_id)
        } else {
            timer.time(&mut t.lookup, || -> Result<MatchResult> {
                let m = match (&index, feature) {
                    (Index::Vector(ix), Some(Feature::Vector(v))) => ix.nn_lookup(chunk.chunk_id, v)?,
                    (Index::Super(ix), Some(Feature::Super(sf))) => ix.firstfit_lookup(chunk.chunk_id, sf)?,
                    _ => MatchResult::unique(chunk.chunk_id),
                };
                match (&mut index, feature) {
                    (Index::Vector(ix), Some(Feature::Vector(v))) => ix.insert(chunk.chunk_id, v)?,
                    (Index::Super(ix), Some(Feature::Super(sf))) => ix.insert(chunk.chunk_id, sf)?,
                    _ => {}
                }
                Ok(m)
            })?
        };
        let record = match dedupe_decide(exact, &m) {
            DedupeAction::Duplicate(base) => {
                dup += 1;
                IndexRecord {
                    digest: chunk.identity_digest,
                    chunk_id: chunk.chunk_id,
                    reference: Some(base),
                    payload_offset: 0,
                    payload_len: 0,
                    kind: RecordKind::Duplicate,
                }
            }
            DedupeAction::Delta(base) => {
                sim += 1;
                let base_bytes = &contents[&base];
                let bytes = timer.time(&mut t.delta, || -> Result<Vec<u8>> {
                    let patch = delta_encode(&chunk.content, base_bytes);
                    if cfg.verify && delta_decode(&patch, base_bytes)? != chunk.content {
                        return Err(CardError::Corruption {
                            chunk_id: chunk.chunk_id,
                            reason: format!("patch against chunk {base} does not decode to the chunk"),
                        });
                    }
                    Ok(patch.to_bytes())
                })?;
                let r = IndexRecord {
                    digest: chunk.identity_digest,
                    chunk_id: chunk.chunk_id,
                    reference: Some(base),
                    payload_offset: store.patches.len() as u64,
                    payload_len: bytes.len() as u32,
                    kind: RecordKind::Similar,
                };
                store.patches.extend_from_slice(&bytes);
                r
            }
            DedupeAction::Store => {
                uniq += 1;
                let r = IndexRecord {
                    digest: chunk.identity_digest,
                    chunk_id: chunk.chunk_id,
                    reference: None,
                    payload_offset: store.chunks.len() as u64,
                    payload_len: chunk.len() as u32,
                    kind: RecordKind::Unique,
                };
                store.chunks.extend_from_slice(&chunk.content);
                r
            }
        };
        if record.kind != RecordKind::Duplicate {
            by_digest.insert(chunk.identity_digest, chunk.chunk_id);
            contents.insert(chunk.chunk_id, chunk.content.clone());
        }
        store.records.push(record);
    }

    let chunk_count = all.len() as u64;
    let unique_bytes = store.chunks.len() as u64;
    let patch_bytes = store.patches.len() as u64;
    let metadata_bytes = chunk_count * METADATA_BYTES_PER_CHUNK;
    let bytes_after = unique_bytes + patch_bytes + metadata_bytes;
    let report = DedupReport {
        detector: cfg.detector.name().to_string(),
        avg_chunk_size: cfg.chunking.avg_size,
        dimension,
        bytes_before,
        bytes_after,
        unique_bytes,
        patch_bytes,
        metadata_bytes,
        dcr: compute_dcr(bytes_before, bytes_after)?,
        dcr_no_metadata: compute_dcr(bytes_before, (unique_bytes + patch_bytes).max(1))?,
        chunk_count,
        duplicate_count: dup,
        similar_count: sim,
        unique_count: uniq,
        phase_timings: t,
    };
    if let Some(dir) = &cfg.output_dir {
        store.write_dir(dir)?;
    }
    Ok(RunOutput {
        report,
        store,
        training,
    })
}

/// A warm-up run, then `repeats` timed runs; the report of the run with the
/// median total time is returned.
pub fn run_timed(cfg: &RunConfig, versions: &[VersionData], repeats: usize) -> Result<RunOutput> {
    let mut first = run_dedupe(cfg, versions)?;
    if repeats == 0 || cfg.deterministic {
        return Ok(first);
    }
    let mut runs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        runs.push(run_dedupe(cfg, versions)?);
    }
    runs.sort_by(|a, b| a.report.total_time_s().total_cmp(&b.report.total_time_s()));
    first = runs.swap_remove(repeats / 2);
    Ok(first)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    ChunkSize,
    Dimension,
}

impl FromStr for SweepAxis {
    type Err = CardError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chunk_size" => Ok(SweepAxis::ChunkSize),
            "dimension" => Ok(SweepAxis::Dimension),
            _ => Err(CardError::param(format!("unknown sweep axis {s:?}"))),
        }
    }
}

/// One timed run per value with everything else held fixed.
pub fn sweep(template: &RunConfig, axis: SweepAxis, values: &[usize], versions: &[VersionData], repeats: usize) -> Result<Vec<DedupReport>> {
    values
        .iter()
        .map(|&v| {
            let cfg = match axis {
                SweepAxis::ChunkSize => {
                    let mut cfg = template.clone();
                    cfg.chunking = ChunkingConfig {
                        gear_seed: template.chunking.gear_seed,
                        ..ChunkingConfig::with_avg(v)
                    };
                    cfg
                }
                SweepAxis::Dimension => template.clone().with_dimension(v),
            };
            Ok(run_timed(&cfg, versions, repeats)?.report)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn versions_of(data: Vec<u8>) -> Vec<VersionData> {
        vec![VersionData::new("v0", vec![("a.bin".into(), Bytes::from(data))])]
    }

    fn small_cfg(detector: Detector) -> RunConfig {
        RunConfig {
            detector,
            chunking: ChunkingConfig::with_avg(1024),
            deterministic: true,
            ..RunConfig::default()
        }
    }

    #[test]
    fn detector_names_round_trip() {
        for d in [Detector::Card, Detector::Finesse, Detector::NTransform, Detector::None] {
            assert_eq!(d.name().parse::<Detector>().unwrap(), d);
        }
        assert!("bogus".parse::<Detector>().is_err());
    }

    #[test]
    fn index_record_layout() {
        let r = IndexRecord {
            digest: Digest256([7; 32]),
            chunk_id: 3,
            reference: None,
            payload_offset: 10,
            payload_len: 20,
            kind: RecordKind::Similar,
        };
        let b = r.to_bytes();
        assert_eq!(&b[40..48], &[0xff; 8]);
        assert_eq!(b[60], 1);
        assert_eq!(&b[61..], &[0, 0, 0]);
        assert_eq!(IndexRecord::from_bytes(&b, 0).unwrap(), r);
    }

    #[test]
    fn copied_stream_is_deduplicated() {
        let data = Bytes::from(SplitMix64::new(1).bytes(200_000));
        let copy = vec![("a.bin".to_string(), data)];
        let versions = vec![VersionData::new("v0", copy.clone()), VersionData::new("v1", copy)];
        // 64 bytes of metadata per 4 KiB chunk stays under 5%.
        let cfg = RunConfig {
            chunking: ChunkingConfig::with_avg(4096),
            ..small_cfg(Detector::None)
        };
        let out = run_dedupe(&cfg, &versions).unwrap();
        let r = &out.report;
        assert!(r.metadata_bytes * 20 <= r.bytes_before);
        assert_eq!(r.duplicate_count + r.similar_count + r.unique_count, r.chunk_count);
        assert_eq!(r.duplicate_count * 2, r.chunk_count);
        assert!(r.dcr >= 1.9, "dcr {}", r.dcr);
        assert_eq!(r.bytes_after, out.store.stored_bytes());
    }

    #[test]
    fn random_stream_does_not_compress() {
        let out = run_dedupe(&small_cfg(Detector::None), &versions_of(SplitMix64::new(2).bytes(100_000))).unwrap();
        let r = &out.report;
        assert!(r.dcr <= 1.0 && r.dcr > 0.9, "dcr {}", r.dcr);
        assert!((r.dcr_no_metadata - 1.0).abs() < 1e-12);
    }

    #[test]
    fn card_needs_two_chunks_to_train() {
        let err = run_dedupe(&small_cfg(Detector::Card), &versions_of(vec![1u8; 100])).unwrap_err();
        assert!(matches!(err, CardError::EmptySamples(_)));
    }

    #[test]
    fn every_detector_reconstructs() {
        let base = SplitMix64::new(3).bytes(60_000);
        let mut edited = base.clone();
        for i in (0..edited.len()).step_by(997) {
            edited[i] ^= 0x11;
        }
        let versions = vec![
            VersionData::new("v0", vec![("f".into(), Bytes::from(base))]),
            VersionData::new("v1", vec![("f".into(), Bytes::from(edited))]),
        ];
        for d in [Detector::Card, Detector::Finesse, Detector::NTransform, Detector::None] {
            let out = run_dedupe(&small_cfg(d), &versions).unwrap();
            assert_eq!(out.store.verify_against(&versions).unwrap(), 120_000, "{d:?}");
        }
    }

    #[test]
    fn sweep_of_nothing_is_empty() {
        assert!(sweep(&small_cfg(Detector::None), SweepAxis::ChunkSize, &[], &[], 3).unwrap().is_empty());
    }
}
