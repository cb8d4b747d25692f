//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls the library code it checks: the
//! oracles recompute from first principles, one byte or one bit at a time.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use bytes::Bytes;
use xxhash_rust::xxh64::xxh64;

pub const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn finalize(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// n-th (1-based) SplitMix64 output for `seed`.
pub fn splitmix_nth(seed: u64, n: u64) -> u64 {
    finalize(seed.wrapping_add(GAMMA.wrapping_mul(n)))
}

pub fn splitmix_stream(seed: u64, count: usize) -> Vec<u64> {
    (1..=count as u64).map(|n| splitmix_nth(seed, n)).collect()
}

/// Deterministic test bytes, independent of the library generator.
pub fn test_bytes(seed: u64, len: usize) -> Vec<u8> {
    (0..len)
        .map(|i| (splitmix_nth(seed ^ 0xabcdef, 1 + (i / 8) as u64) >> (8 * (i % 8))) as u8)
        .collect()
}

// ---- chunking ----

/// Boundaries recomputed at every position: the gear hash of a position is
/// the shifted sum of the gear values of the (at most 64) preceding bytes
/// since the hashing start, and the cut test is applied to it directly.
pub fn gear_boundaries(data: &[u8], avg: usize, min: usize, max: usize, seed: u64) -> Vec<usize> {
    let gear = splitmix_stream(seed, 256);
    let bits = avg.trailing_zeros();
    let top = |b: u32| !0u64 << (64 - b);
    let (small, large) = (top(bits + 1), top(bits - 1));
    let mut out = Vec::new();
    let mut s = 0;
    while s < data.len() {
        let rem = data.len() - s;
        let mut cut = rem.min(max);
        if rem > min {
            for p in min..rem.min(max) {
                let lo = min.max(p.saturating_sub(63));
                let mut h = 0u64;
                for j in lo..=p {
                    h = h.wrapping_add(gear[data[s + j] as usize].wrapping_shl((p - j) as u32));
                }
                let mask = if p < avg { small } else { large };
                if h & mask == 0 {
                    cut = p + 1;
                    break;
                }
            }
        } else {
            cut = rem;
        }
        s += cut;
        out.push(s);
    }
    out
}

/// Remainder of the window polynomial mod `x^64 + x^4 + x^3 + x + 1`, bit by bit.
pub fn rabin_bitwise(window: &[u8]) -> u64 {
    let mut r = 0u64;
    for &byte in window {
        for bit in (0..8).rev() {
            let carry = r >> 63;
            r = (r << 1) | ((byte >> bit) & 1) as u64;
            if carry == 1 {
                r ^= 0x1b;
            }
        }
    }
    r
}

pub fn all_fingerprints(data: &[u8], w: usize) -> Vec<u64> {
    (0..=data.len() - w).map(|i| rabin_bitwise(&data[i..i + w])).collect()
}

pub fn split_fixed(data: &[u8], k: usize) -> Vec<&[u8]> {
    let size = data.len() / k;
    (0..k)
        .map(|j| if j + 1 == k { &data[j * size..] } else { &data[j * size..(j + 1) * size] })
        .collect()
}

// ---- features ----

pub fn minhash_digest(span: &[u8], gram_salt: u64, out_salt: u64) -> u64 {
    let min = if span.len() < 4 {
        let mut w = 0u64;
        for (i, b) in span.iter().enumerate() {
            w |= (*b as u64) << (8 * i);
        }
        w |= (span.len() as u64) << 56;
        finalize(w ^ gram_salt)
    } else {
        let mut best = u64::MAX;
        for i in 0..=span.len() - 4 {
            let g = span[i] as u64 | (span[i + 1] as u64) << 8 | (span[i + 2] as u64) << 16 | (span[i + 3] as u64) << 24;
            best = best.min(finalize(g ^ gram_salt));
        }
        best
    };
    finalize(min ^ out_salt)
}

/// Straight-line initial feature: enumerate the shingle set around each
/// centre, hash each shingle into M values, normalise, average.
pub fn initial_feature_oracle(data: &[u8], k: usize, order: usize, m: usize, seed: u64, gram_salt: u64, out_salt: u64) -> Vec<f64> {
    let digests: Vec<u64> = split_fixed(data, k).iter().map(|s| minhash_digest(s, gram_salt, out_salt)).collect();
    let mut set: Vec<Vec<u8>> = Vec::new();
    for r in 1..=order {
        let width = (2 * r + 1).min(k);
        let half = width / 2;
        // Centres whose full window fits; an even width (k < 2r + 1) means
        // the whole sequence, taken once.
        let centres: Vec<usize> = if width == 2 * r + 1 { (r..k - r).collect() } else { vec![half] };
        for c in centres {
            let lo = if width == 2 * r + 1 { c - r } else { 0 };
            let mut s = Vec::new();
            for (n, d) in digests[lo..lo + width].iter().enumerate() {
                if n > 0 {
                    s.push(b'|');
                }
                s.extend_from_slice(&d.to_be_bytes());
            }
            if !set.contains(&s) {
                set.push(s);
            }
        }
    }
    let mut acc = vec![0.0; m];
    for s in &set {
        let base = xxh64(s, seed);
        let sub: Vec<f64> = (0..m)
            .map(|i| splitmix_nth(base, i as u64 + 1) as i64 as f64 / 2f64.powi(63))
            .collect();
        let norm = sub.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, x) in acc.iter_mut().zip(&sub) {
            *a += x / norm;
        }
    }
    acc.iter().map(|a| a / set.len() as f64).collect()
}

fn digest_le(values: &[u64], seed: u64) -> u64 {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    xxh64(&bytes, seed)
}

/// N-transform from the seed: transforms are consecutive SplitMix64 pairs
/// `(odd multiplier, addend)`.
pub fn ntransform_oracle(data: &[u8], n: usize, window: usize, groups: usize, seed: u64) -> Vec<u64> {
    let stream = splitmix_stream(seed, 2 * n);
    let fps = all_fingerprints(data, window);
    let feats: Vec<u64> = (0..n)
        .map(|t| {
            let (m, a) = (stream[2 * t] | 1, stream[2 * t + 1]);
            fps.iter().map(|fp| m.wrapping_mul(*fp).wrapping_add(a)).max().unwrap()
        })
        .collect();
    feats.chunks(n / groups).map(|g| digest_le(g, seed)).collect()
}

/// Finesse: sub-chunk maxima in position order, groups of `dims`
/// consecutive maxima, each ranked; digest `d` takes rank `d` of every group.
pub fn finesse_oracle(data: &[u8], k: usize, dims: usize, window: usize, seed: u64) -> Vec<u64> {
    let maxima: Vec<u64> = split_fixed(data, k)
        .iter()
        .map(|s| *all_fingerprints(s, window).iter().max().unwrap())
        .collect();
    let groups: Vec<Vec<u64>> = maxima
        .chunks(dims)
        .map(|g| {
            let mut g = g.to_vec();
            g.sort();
            g.reverse();
            g
        })
        .collect();
    (0..dims)
        .map(|d| digest_le(&groups.iter().map(|g| g[d]).collect::<Vec<_>>(), seed))
        .collect()
}

// ---- matching ----

/// `(argmax id, score)` by exhaustive cosine; ties to the smaller id.
pub fn nn_oracle(stored: &[(u64, Vec<f64>)], q: &[f64]) -> Option<(u64, f64)> {
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut best: Option<(u64, f64)> = None;
    for (id, v) in stored {
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vn == 0.0 || qn == 0.0 {
            continue;
        }
        let c = v.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / (vn * qn);
        best = match best {
            Some((bid, bs)) if bs > c || (bs == c && bid < *id) => Some((bid, bs)),
            _ => Some((*id, c)),
        };
    }
    best
}

/// ROC-AUC by pairwise comparison (ties count one half).
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in positives {
        for n in negatives {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (positives.len() * negatives.len()) as f64
}

// ---- fixtures ----

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

pub fn files(list: &[(&str, Vec<u8>)]) -> Vec<(String, Bytes)> {
    list.iter().map(|(p, d)| (p.to_string(), Bytes::from(d.clone()))).collect()
}

/// Compare `actual` with a golden file, or rewrite it when `CARD_BLESS=1`.
pub fn check_golden(name: &str, actual: &[u8]) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var("CARD_BLESS").as_deref() == Ok("1") {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        let at = expected.iter().zip(actual).position(|(a, b)| a != b).unwrap_or(expected.len().min(actual.len()));
        Err(format!(
            "{name}: first difference at byte {at} (golden {} bytes, actual {} bytes)",
            expected.len(),
            actual.len()
        ))
    }
}

// ---- golden artifacts ----

/// A small model trained sequentially for three epochs on fixed samples.
pub fn golden_model_bytes() -> Vec<u8> {
    use card_core::context_model::{build_samples, train, ModelConfig};
    use card_core::features::InitialFeature;
    let feats: Vec<InitialFeature> = (0..12u64)
        .map(|i| InitialFeature {
            chunk_id: i,
            vector: (0..4).map(|j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5).collect(),
        })
        .collect();
    let cfg = ModelConfig {
        dim_m: 4,
        dim_d: 3,
        context_k: 2,
        epochs: 3,
        batch_size: 5,
        rng_seed: 42,
        parallel: false,
        ..ModelConfig::default()
    };
    let samples = build_samples(&feats, cfg.context_k, true).unwrap();
    train(&samples, cfg).unwrap().model.to_bytes()
}

/// Patch of an edited, extended buffer against its original.
pub fn golden_patch_bytes() -> Vec<u8> {
    let base = test_bytes(77, 600);
    let mut target = base.clone();
    target[100] ^= 0xff;
    target.splice(300..300, b"inserted literal bytes".iter().copied());
    target.truncate(550);
    target.extend_from_slice(&base[0..40]);
    card_core::delta::delta_encode(&target, &base).to_bytes()
}

/// Manifest of a three-file tree.
pub fn golden_manifest_json() -> String {
    let dir = tempfile::tempdir().unwrap();
    let files = files(&[
        ("b.txt", b"bravo\n".to_vec()),
        ("a.txt", b"alpha\n".to_vec()),
        ("sub/c.bin", test_bytes(3, 1000)),
    ]);
    card_core::corpus::write_files(dir.path(), &files).unwrap();
    card_core::corpus::ingest(dir.path(), "golden").unwrap().manifest.to_json().unwrap()
}
