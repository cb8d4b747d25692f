//! Corpus ingestion and synthetic version generation.
//!
//! A corpus is a directory tree. [`ingest`] turns it into a [`CorpusManifest`]
//! whose entries are sorted lexicographically by relative path, so the byte
//! stream a run sees is reproducible. [`mutate`] applies one of four seeded
//! modification patterns to a byte buffer and [`generate_versions`] applies a
//! pattern to every file of a corpus to produce a new version.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bytes::Bytes;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::rng::{derive_seed, SplitMix64};
use crate::{hash_bytes, CardError, Digest256, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the corpus root, `/`-separated.
    pub path: String,
    pub size: u64,
    pub content_digest: Digest256,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_id: String,
    pub entries: Vec<ManifestEntry>,
    pub version_tag: String,
    pub total_bytes: u64,
}

impl CorpusManifest {
    /// Build a manifest from entries, sorting them and deriving the id.
    pub fn from_entries(mut entries: Vec<ManifestEntry>, version_tag: impl Into<String>) -> Self {
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        let total_bytes = entries.iter().map(|e| e.size).sum();
        let mut h = Sha256::new();
        for e in &entries {
            h.update(e.path.as_bytes());
            h.update([0u8]);
            h.update(e.content_digest.0);
            h.update(b"\n");
        }
        let full: [u8; 32] = h.finalize().into();
        CorpusManifest {
            corpus_id: hex::encode(&full[..8]),
            entries,
            version_tag: version_tag.into(),
            total_bytes,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| CardError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| CardError::io(path, e))?;
        Self::from_json(&s)
    }
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: CorpusManifest,
}

impl Corpus {
    /// Read every file in manifest order.
    pub fn read_files(&self) -> Result<Vec<(String, Bytes)>> {
        self.manifest
            .entries
            .iter()
            .map(|e| {
                let p = self.root.join(&e.path);
                let data = fs::read(&p).map_err(|err| CardError::io(&p, err))?;
                Ok((e.path.clone(), Bytes::from(data)))
            })
            .collect()
    }
}

/// Scan `root` and produce a manifest of every regular file under it.
///
/// Symlinks are skipped (not followed) and empty directories contribute
/// nothing. Files are hashed in parallel; the manifest order is fixed by path.
pub fn ingest(root: &Path, version_tag: &str) -> Result<Corpus> {
    if !root.is_dir() {
        let err = fs::metadata(root)
            .err()
            .unwrap_or_else(|| std::io::Error::other("not a directory"));
        return Err(CardError::io(root, err));
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(false) {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            CardError::io(path, e.into())
        })?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }
    if files.is_empty() {
        return Err(CardError::EmptyCorpus(root.to_path_buf()));
    }

    let entries = files
        .par_iter()
        .map(|p| {
            let data = fs::read(p).map_err(|e| CardError::io(p, e))?;
            Ok(ManifestEntry {
                path: relative_path(root, p),
                size: data.len() as u64,
                content_digest: Digest256::of(&data),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Corpus {
        root: root.to_path_buf(),
        manifest: CorpusManifest::from_entries(entries, version_tag),
    })
}

fn relative_path(root: &Path, p: &Path) -> String {
    let rel = p.strip_prefix(root).unwrap_or(p);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationPattern {
    HeadModify,
    TailDelete,
    MidInsert,
    RandomEdit,
}

impl MutationPattern {
    pub fn name(self) -> &'static str {
        match self {
            MutationPattern::HeadModify => "head_modify",
            MutationPattern::TailDelete => "tail_delete",
            MutationPattern::MidInsert => "mid_insert",
            MutationPattern::RandomEdit => "random_edit",
        }
    }
}

impl fmt::Display for MutationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MutationPattern {
    type Err = CardError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "head_modify" => Ok(MutationPattern::HeadModify),
            "tail_delete" => Ok(MutationPattern::TailDelete),
            "mid_insert" => Ok(MutationPattern::MidInsert),
            "random_edit" => Ok(MutationPattern::RandomEdit),
            other => Err(CardError::param(format!("unknown mutation pattern {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationSpec {
    pub pattern: MutationPattern,
    pub edit_fraction: f64,
    pub seed: u64,
}

impl MutationSpec {
    pub fn new(pattern: MutationPattern, edit_fraction: f64, seed: u64) -> Self {
        MutationSpec {
            pattern,
            edit_fraction,
            seed,
        }
    }

    pub fn label(&self) -> String {
        format!("{}-{}-s{}", self.pattern, self.edit_fraction, self.seed)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.edit_fraction) {
            return Err(CardError::param(format!(
                "edit_fraction {} outside [0, 1]",
                self.edit_fraction
            )));
        }
        Ok(())
    }

    /// Number of bytes the mutation touches on an input of `len` bytes:
    /// `ceil(edit_fraction * len)`.
    pub fn edit_len(&self, len: usize) -> usize {
        // The epsilon absorbs representation error such as 0.1 * 1000.
        let n = (self.edit_fraction * len as f64 - 1e-9).ceil().max(0.0) as usize;
        n.min(len)
    }
}

/// Apply a seeded mutation to `input`.
///
/// The pseudo-random stream is SplitMix64 seeded with `spec.seed`; see the
/// crate book for the exact draw order of each pattern.
pub fn mutate(input: &[u8], spec: &MutationSpec) -> Result<Vec<u8>> {
    spec.validate()?;
    let len = input.len();
    let n = spec.edit_len(len);
    if input.is_empty() && spec.pattern != MutationPattern::MidInsert && spec.edit_fraction > 0.0 {
        return Err(CardError::param(format!(
            "{} requires a non-empty input",
            spec.pattern
        )));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let mut out = input.to_vec();
    match spec.pattern {
        MutationPattern::HeadModify => rng.fill_bytes(&mut out[..n]),
        MutationPattern::TailDelete => out.truncate(len - n),
        MutationPattern::MidInsert => {
            let at = rng.below(len as u64 + 1) as usize;
            let inserted = rng.bytes(n);
            out.splice(at..at, inserted);
        }
        MutationPattern::RandomEdit => {
            for pos in sample_distinct(&mut rng, len, n) {
                // XOR with a non-zero mask so every chosen byte really changes.
                out[pos] ^= 1 + rng.below(255) as u8;
            }
        }
    }
    Ok(out)
}

/// Floyd's algorithm: `n` distinct positions from `0..len`, in draw order.
fn sample_distinct(rng: &mut SplitMix64, len: usize, n: usize) -> Vec<usize> {
    let mut chosen = HashSet::with_capacity(n);
    let mut order = Vec::with_capacity(n);
    for j in (len - n)..len {
        let t = rng.below(j as u64 + 1) as usize;
        let pick = if chosen.contains(&t) { j } else { t };
        chosen.insert(pick);
        order.push(pick);
    }
    order
}

/// Per-file seed: each file of a version is mutated independently.
fn file_seed(seed: u64, path: &str) -> u64 {
    derive_seed(seed, hash_bytes(path.as_bytes(), 0))
}

/// Mutate every file of a corpus held in memory.
pub fn mutate_files(files: &[(String, Bytes)], spec: &MutationSpec) -> Result<Vec<(String, Bytes)>> {
    files
        .iter()
        .map(|(path, data)| {
            let s = MutationSpec {
                seed: file_seed(spec.seed, path),
                ..*spec
            };
            Ok((path.clone(), Bytes::from(mutate(data, &s)?)))
        })
        .collect()
}

/// Derive one new corpus per spec from `base`, writing each under `out_dir`.
///
/// Every version is derived from the base independently; its tag is
/// `"<base tag>+<pattern>-<fraction>-s<seed>"`.
pub fn generate_versions(base: &Corpus, specs: &[MutationSpec], out_dir: &Path) -> Result<Vec<Corpus>> {
    if specs.is_empty() {
        return Ok(Vec::new());
    }
    let files = base.read_files()?;
    let mut out = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let tag = format!("{}+{}", base.manifest.version_tag, spec.label());
        let dir = out_dir.join(format!("v{:02}-{}", i + 1, spec.label()));
        let mutated = mutate_files(&files, spec)?;
        write_files(&dir, &mutated)?;
        out.push(ingest(&dir, &tag)?);
    }
    Ok(out)
}

/// Write `(relative path, content)` pairs under `dir`.
pub fn write_files(dir: &Path, files: &[(String, Bytes)]) -> Result<()> {
    for (path, data) in files {
        let p = dir.join(path);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| CardError::io(parent, e))?;
        }
        fs::write(&p, data).map_err(|e| CardError::io(&p, e))?;
    }
    Ok(())
}

/// Seeded random files `file_0000.bin ..` of `file_size` bytes each.
pub fn synthetic_files(file_count: usize, file_size: usize, seed: u64) -> Vec<(String, Bytes)> {
    (0..file_count)
        .map(|i| {
            let mut rng = SplitMix64::new(derive_seed(seed, i as u64));
            (format!("file_{i:04}.bin"), Bytes::from(rng.bytes(file_size)))
        })
        .collect()
}

/// Write a synthetic base corpus to `dir` and ingest it.
pub fn synthesize(dir: &Path, file_count: usize, file_size: usize, seed: u64, version_tag: &str) -> Result<Corpus> {
    write_files(dir, &synthetic_files(file_count, file_size, seed))?;
    ingest(dir, version_tag)
}
