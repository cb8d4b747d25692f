//! The chunk-context model.
//!
//! A CBOW-shaped linear network. Vectors are rows: for a target chunk with
//! context features `c_1 .. c_2K` (M-dimensional),
//!
//! ```text
//! hidden = (sum c_j / 2K) · W          W: M×D
//! output = hidden · U / 2K             U: D×M
//! ```
//!
//! Training regresses `output` onto the target's own feature (mean squared
//! error, mini-batch SGD). Prediction inverts the second layer:
//! `predict(v) = 2K · v · U⁺`, with `U⁺` a ridge-regularised right inverse of
//! `U`, which gives a D-dimensional context-aware feature.

use std::path::Path;

use log::debug;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::InitialFeature;
use crate::rng::{derive_seed, SplitMix64};
use crate::{hash_bytes, CardError, ChunkId, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"CARDMDL1";
pub const DEFAULT_MODEL_SEED: u64 = 0x6d6f_6465_6c5f_7365;

const SHUFFLE_SALT: u64 = 0x7368_7566;
/// Samples per rayon task in parallel mode.
const PARALLEL_SLICE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim_m: usize,
    pub dim_d: usize,
    pub context_k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Ridge strength relative to the mean squared singular value of `U`.
    /// Zero selects the exact inverse.
    pub ridge_epsilon: f64,
    /// Zero-pad missing neighbours at stream ends (otherwise those chunks
    /// produce no sample).
    pub pad_boundaries: bool,
    /// Accumulate batch gradients across threads.
    pub parallel: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim_m: 50,
            dim_d: 50,
            context_k: 2,
            learning_rate: 0.05,
            epochs: 50,
            batch_size: 64,
            rng_seed: DEFAULT_MODEL_SEED,
            ridge_epsilon: 1.0,
            pad_boundaries: true,
            parallel: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim_m == 0 || self.dim_d == 0 {
            return Err(CardError::param("dim_m and dim_d must be at least 1"));
        }
        if self.context_k == 0 {
            return Err(CardError::param("context_k must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CardError::param("learning_rate must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(CardError::param("batch_size must be at least 1"));
        }
        if !(self.ridge_epsilon >= 0.0 && self.ridge_epsilon.is_finite()) {
            return Err(CardError::param("ridge_epsilon must be non-negative and finite"));
        }
        Ok(())
    }

    fn two_k(&self) -> f64 {
        (2 * self.context_k) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub target_id: ChunkId,
    /// Neighbour ids, `None` where a zero vector pads a stream end.
    pub context_ids: Vec<Option<ChunkId>>,
    pub context_vectors: Vec<Vec<f64>>,
    pub target_vector: Vec<f64>,
}

impl TrainingSample {
    /// Sum of the context vectors divided by `2K`.
    pub fn context_mean(&self) -> Vec<f64> {
        let n = self.context_vectors.len() as f64;
        let mut acc = vec![0.0; self.target_vector.len()];
        for c in &self.context_vectors {
            for (a, x) in acc.iter_mut().zip(c) {
                *a += x;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// One sample per chunk; neighbours `i-K..i-1, i+1..i+K` in stream order.
pub fn build_samples(features: &[InitialFeature], context_k: usize, pad_boundaries: bool) -> Result<Vec<TrainingSample>> {
    if features.len() < 2 {
        return Err(CardError::EmptySamples(features.len()));
    }
    if context_k == 0 {
        return Err(CardError::param("context_k must be at least 1"));
    }
    let dim = features[0].vector.len();
    if let Some(f) = features.iter().find(|f| f.vector.len() != dim) {
        return Err(CardError::Shape(format!(
            "chunk {} has dimension {}, expected {dim}",
            f.chunk_id,
            f.vector.len()
        )));
    }
    let n = features.len() as isize;
    let k = context_k as isize;
    let mut out = Vec::with_capacity(features.len());
    for i in 0..n {
        let offsets = (-k..0).chain(1..=k);
        let mut ids = Vec::with_capacity(2 * context_k);
        let mut vecs = Vec::with_capacity(2 * context_k);
        for off in offsets {
            let j = i + off;
            if (0..n).contains(&j) {
                let f = &features[j as usize];
                ids.push(Some(f.chunk_id));
                vecs.push(f.vector.clone());
            } else {
                ids.push(None);
                vecs.push(vec![0.0; dim]);
            }
        }
        if !pad_boundaries && ids.iter().any(Option::is_none) {
            continue;
        }
        let t = &features[i as usize];
        out.push(TrainingSample {
            target_id: t.chunk_id,
            context_ids: ids,
            context_vectors: vecs,
            target_vector: t.vector.clone(),
        });
    }
    if out.is_empty() {
        return Err(CardError::EmptySamples(features.len()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextModel {
    pub cfg: ModelConfig,
    w: DMatrix<f64>,
    u: DMatrix<f64>,
    u_pinv: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ContextModel,
    /// Mean squared error over all samples after each epoch.
    pub epoch_losses: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Gradients of [`ContextModel::loss`] with respect to `W` and `U`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl ContextModel {
    /// Weights drawn uniformly from `(-1/sqrt(D), 1/sqrt(D))`, `W` then `U`,
    /// each row-major.
    pub fn initialize(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(cfg.rng_seed);
        let r = 1.0 / (cfg.dim_d as f64).sqrt();
        let mut draw = |rows, cols| {
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-r, r)).collect();
            DMatrix::from_row_slice(rows, cols, &data)
        };
        let w = draw(cfg.dim_m, cfg.dim_d);
        let u = draw(cfg.dim_d, cfg.dim_m);
        Self::from_weights(cfg, w, u)
    }

    pub fn from_weights(cfg: ModelConfig, w: DMatrix<f64>, u: DMatrix<f64>) -> Result<Self> {
        cfg.validate()?;
        if w.shape() != (cfg.dim_m, cfg.dim_d) || u.shape() != (cfg.dim_d, cfg.dim_m) {
            return Err(CardError::Shape(format!(
                "W is {:?} and U is {:?}, expected ({m}, {d}) and ({d}, {m})",
                w.shape(),
                u.shape(),
                m = cfg.dim_m,
                d = cfg.dim_d
            )));
        }
        if w.iter().chain(u.iter()).any(|x| !x.is_finite()) {
            return Err(CardError::param("model weights must be finite"));
        }
        let u_pinv = regularized_pinv(&u, cfg.ridge_epsilon);
        Ok(ContextModel { cfg, w, u, u_pinv })
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// The cached `M×D` right inverse used by [`predict`](Self::predict).
    pub fn u_pinv(&self) -> &DMatrix<f64> {
        &self.u_pinv
    }

    fn check_sample(&self, s: &TrainingSample) -> Result<()> {
        let m = self.cfg.dim_m;
        if s.context_vectors.len() != 2 * self.cfg.context_k {
            return Err(CardError::Shape(format!(
                "sample has {} context vectors, model expects {}",
                s.context_vectors.len(),
                2 * self.cfg.context_k
            )));
        }
        if s.target_vector.len() != m || s.context_vectors.iter().any(|c| c.len() != m) {
            return Err(CardError::Shape(format!("sample vectors must have dimension {m}")));
        }
        Ok(())
    }

    /// `(hidden, output)` for one sample.
    pub fn forward(&self, sample: &TrainingSample) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_sample(sample)?;
        let a = DMatrix::from_row_slice(1, self.cfg.dim_m, &sample.context_mean());
        let h = &a * &self.w;
        let o = (&h * &self.u) / self.cfg.two_k();
        Ok((h.iter().copied().collect(), o.iter().copied().collect()))
    }

    /// Context-aware feature of an initial feature.
    pub fn predict(&self, feature: &[f64]) -> Result<Vec<f64>> {
        self.row_times(feature, &self.u_pinv, self.cfg.two_k())
    }

    /// First-layer image `v · W` of a vector, an alternative representation
    /// that skips the inverse.
    pub fn hidden_of(&self, feature: &[f64]) -> Result<Vec<f64>> {
        self.row_times(feature, &self.w, 1.0)
    }

    fn row_times(&self, v: &[f64], m: &DMatrix<f64>, scale: f64) -> Result<Vec<f64>> {
        if v.len() != m.nrows() {
            return Err(CardError::Shape(format!(
                "vector has dimension {}, model expects {}",
                v.len(),
                m.nrows()
            )));
        }
        Ok((0..m.ncols())
            .map(|j| scale * m.column(j).iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    /// Mean over samples of `|output - target|^2 / M`.
    pub fn loss(&self, samples: &[TrainingSample]) -> Result<f64> {
        Ok(self.loss_and_gradients(samples)?.0)
    }

    pub fn loss_and_gradients(&self, samples: &[TrainingSample]) -> Result<(f64, Gradients)> {
        if samples.is_empty() {
            return Err(CardError::EmptySamples(0));
        }
        for s in samples {
            self.check_sample(s)?;
        }
        let (a, t) = stack(samples, self.cfg.dim_m);
        Ok(batch_gradients(&self.w, &self.u, &a, &t, self.cfg.two_k(), samples.len()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CardError::io(path, e))
    }

    /// `CARDMDL1`, u32 M, D, K, `W` and `U` row-major as f64, then the
    /// XXH64 (seed 0) of everything between the magic and the checksum. All
    /// integers and floats little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (m, d) = (self.cfg.dim_m, self.cfg.dim_d);
        let mut out = Vec::with_capacity(8 + 12 + 16 * m * d + 8);
        out.extend_from_slice(MODEL_MAGIC);
        for x in [m, d, self.cfg.context_k] {
            out.extend_from_slice(&(x as u32).to_le_bytes());
        }
        for mat in [&self.w, &self.u] {
            for r in 0..mat.nrows() {
                for c in 0..mat.ncols() {
                    out.extend_from_slice(&mat[(r, c)].to_le_bytes());
                }
            }
        }
        let sum = hash_bytes(&out[8..], 0);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    /// Parse a model file. Fields not stored in the file take their defaults.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, reason: String| CardError::Format {
            offset: offset as u64,
            reason,
        };
        if bytes.len() < 20 {
            return Err(fmt(bytes.len(), "truncated model header".into()));
        }
        if &bytes[..8] != MODEL_MAGIC {
            return Err(fmt(0, "bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        let (m, d, k) = (word(0), word(1), word(2));
        let payload = 16usize
            .checked_mul(m)
            .and_then(|x| x.checked_mul(d))
            .ok_or_else(|| fmt(8, format!("dimensions {m}x{d} overflow")))?;
        let expect = 20 + payload + 8;
        if bytes.len() != expect {
            return Err(fmt(
                bytes.len().min(expect),
                format!("header declares M={m} D={d} ({expect} bytes), file has {} bytes", bytes.len()),
            ));
        }
        let sum_at = expect - 8;
        let stored = u64::from_le_bytes(bytes[sum_at..].try_into().unwrap());
        if stored != hash_bytes(&bytes[8..sum_at], 0) {
            return Err(fmt(sum_at, "checksum mismatch".into()));
        }
        let floats: Vec<f64> = bytes[20..sum_at]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let w = DMatrix::from_row_slice(m, d, &floats[..m * d]);
        let u = DMatrix::from_row_slice(d, m, &floats[m * d..]);
        let cfg = ModelConfig {
            dim_m: m,
            dim_d: d,
            context_k: k,
            ..ModelConfig::default()
        };
        Self::from_weights(cfg, w, u).map_err(|e| fmt(8, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CardError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_model(model: &ContextModel, path: &Path) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: &Path) -> Result<ContextModel> {
    ContextModel::load(path)
}

/// `Uᵀ (U Uᵀ + λI)⁻¹` with `λ = ε · tr(U Uᵀ) / D`.
///
/// Falls back to the SVD pseudo-inverse when the Gram matrix is singular.
pub fn regularized_pinv(u: &DMatrix<f64>, epsilon: f64) -> DMatrix<f64> {
    let d = u.nrows();
    let gram = u * u.transpose();
    let lambda = epsilon * gram.trace() / d as f64;
    let reg = &gram + DMatrix::<f64>::identity(d, d) * lambda;
    match reg.try_inverse() {
        Some(inv) if inv.iter().all(|x| x.is_finite()) => u.transpose() * inv,
        _ => u
            .clone()
            .pseudo_inverse(1e-12)
            .unwrap_or_else(|_| DMatrix::zeros(u.ncols(), d)),
    }
}

/// Context means and targets as `B×M` matrices.
fn stack(samples: &[TrainingSample], m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = Vec::with_capacity(samples.len() * m);
    let mut t = Vec::with_capacity(samples.len() * m);
    for s in samples {
        a.extend(s.context_mean());
        t.extend_from_slice(&s.target_vector);
    }
    (
        DMatrix::from_row_slice(samples.len(), m, &a),
        DMatrix::from_row_slice(samples.len(), m, &t),
    )
}

/// Loss and gradients for the rows of `a`/`t`, normalised by `denom` samples.
fn batch_gradients(w: &DMatrix<f64>, u: &DMatrix<f64>, a: &DMatrix<f64>, t: &DMatrix<f64>, two_k: f64, denom: usize) -> (f64, Gradients) {
    let m = a.ncols() as f64;
    let h = a * w;
    let diff = (&h * u) / two_k - t;
    let loss = diff.norm_squared() / (m * denom as f64);
    let g_o = diff * (2.0 / (m * denom as f64));
    let grad_u = h.transpose() * &g_o / two_k;
    let g_h = g_o * u.transpose() / two_k;
    let grad_w = a.transpose() * g_h;
    (loss, Gradients { w: grad_w, u: grad_u })
}

fn epoch_step(model: &mut ContextModel, a: &DMatrix<f64>, t: &DMatrix<f64>) {
    let cfg = model.cfg;
    let b = a.nrows();
    let grads = if cfg.parallel && b > PARALLEL_SLICE {
        let parts: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..b)
            .step_by(PARALLEL_SLICE)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                let n = PARALLEL_SLICE.min(b - start);
                let (_, g) = batch_gradients(
                    &model.w,
                    &model.u,
                    &a.rows(start, n).into_owned(),
                    &t.rows(start, n).into_owned(),
                    cfg.two_k(),
                    b,
                );
                (g.w, g.u)
            })
            .collect();
        let mut gw = DMatrix::zeros(cfg.dim_m, cfg.dim_d);
        let mut gu = DMatrix::zeros(cfg.dim_d, cfg.dim_m);
        for (w, u) in parts {
            gw += w;
            gu += u;
        }
        Gradients { w: gw, u: gu }
    } else {
        batch_gradients(&model.w, &model.u, a, t, cfg.two_k(), b).1
    };
    model.w -= grads.w * cfg.learning_rate;
    model.u -= grads.u * cfg.learning_rate;
}

/// Mini-batch SGD from the seeded initialisation.
pub fn train(samples: &[TrainingSample], cfg: ModelConfig) -> Result<TrainOutcome> {
    let mut model = ContextModel::initialize(cfg)?;
    if samples.is_empty() {
        return Err(CardError::EmptySamples(0));
    }
    for s in samples {
        model.check_sample(s)?;
    }
    let (a_all, t_all) = stack(samples, cfg.dim_m);
    let full_loss = |m: &ContextModel| batch_gradients(&m.w, &m.u, &a_all, &t_all, cfg.two_k(), samples.len()).0;
    let initial_loss = full_loss(&model);
    let mut rng = SplitMix64::new(derive_seed(cfg.rng_seed, SHUFFLE_SALT));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let a = DMatrix::from_fn(batch.len(), cfg.dim_m, |r, c| a_all[(batch[r], c)]);
            let t = DMatrix::from_fn(batch.len(), cfg.dim_m, |r, c| t_all[(batch[r], c)]);
            epoch_step(&mut model, &a, &t);
        }
        let loss = full_loss(&model);
        if !loss.is_finite() || model.w.iter().chain(model.u.iter()).any(|x| !x.is_finite()) {
            return Err(CardError::TrainingDiverged { epoch });
        }
        debug!("epoch {epoch}: loss {loss:.6e}");
        epoch_losses.push(loss);
    }
    model.u_pinv = regularized_pinv(&model.u, cfg.ridge_epsilon);
    let final_loss = epoch_losses.last().copied().unwrap_or(initial_loss);
    Ok(TrainOutcome {
        model,
        epoch_losses,
        initial_loss,
        final_loss,
    })
}
