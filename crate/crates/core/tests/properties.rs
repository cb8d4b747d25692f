mod common;

use bytes::Bytes;
use card_core::chunking::{chunk_stream, Chunker, ChunkingConfig};
use card_core::context_model::{ContextModel, ModelConfig, TrainingSample};
use card_core::corpus::{mutate, MutationPattern, MutationSpec};
use card_core::delta::{delta_decode, delta_encode, DeltaPatch, PATCH_HEADER_LEN};
use card_core::features::superfeature::{finesse_superfeature, FinesseConfig, Scheme, SuperFeature};
use card_core::features::{embed_shingles, shingle_set, FeatureConfig};
use card_core::index::{SuperFeatureIndex, VectorIndex};
use card_core::pipeline::{IndexRecord, RecordKind};
use card_core::report::{parse_csv, render_csv, DedupReport, PhaseTimings};
use card_core::Digest256;
use common::*;
use proptest::prelude::*;

/// (target, base) pairs covering the degenerate cases and related content.
fn delta_pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (0u8..6, any::<u64>(), 0usize..3000).prop_map(|(kind, seed, len)| {
        let base = test_bytes(seed, len);
        let target = match kind {
            0 => Vec::new(),
            1 => vec![seed as u8],
            2 => base.clone(),
            3 => test_bytes(seed ^ 1, len / 2 + 1),
            4 => {
                let spec = MutationSpec::new(MutationPattern::RandomEdit, 0.02, seed);
                mutate(&base, &spec).unwrap_or_default()
            }
            _ => {
                let spec = MutationSpec::new(MutationPattern::MidInsert, 0.1, seed);
                let mut t = mutate(&base, &spec).unwrap();
                let third = t.len() / 3;
                t.rotate_left(third);
                t
            }
        };
        (target, base)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn delta_round_trips((target, base) in delta_pair()) {
        let p = delta_encode(&target, &base);
        prop_assert_eq!(delta_decode(&p, &base).unwrap(), target.clone());
        let wire = p.to_bytes();
        prop_assert_eq!(wire.len(), p.encoded_size());
        prop_assert_eq!(DeltaPatch::from_bytes(&wire).unwrap(), p.clone());
        // One raw Add: opcode plus a varint of at most 10 bytes.
        prop_assert!(p.encoded_size() <= target.len() + PATCH_HEADER_LEN + 11);
    }

    #[test]
    fn chunks_tile_the_stream(seed in any::<u64>(), len in 0usize..60_000, avg_pow in 8u32..12) {
        let data = Bytes::from(test_bytes(seed, len));
        let cfg = ChunkingConfig::with_avg(1 << avg_pow);
        let chunks = chunk_stream(&data, &cfg).unwrap();
        let mut at = 0u64;
        for (i, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.offset, at);
            prop_assert!(c.len() <= cfg.max_size);
            if i + 1 < chunks.len() {
                prop_assert!(c.len() > cfg.min_size);
            }
            prop_assert_eq!(&data[at as usize..at as usize + c.len()], &c.content[..]);
            at += c.len() as u64;
        }
        prop_assert_eq!(at as usize, len);
        prop_assert_eq!(chunks, chunk_stream(&data, &cfg).unwrap());
    }

    #[test]
    fn boundaries_resynchronise_after_a_prepended_byte(seed in any::<u64>(), b in any::<u8>()) {
        let s = test_bytes(seed, 40_000);
        let mut s2 = vec![b];
        s2.extend_from_slice(&s);
        let chunker = Chunker::new(ChunkingConfig::with_avg(512)).unwrap();
        let max = chunker.config().max_size;
        let b1 = chunker.boundaries(&s);
        let b2: Vec<usize> = chunker.boundaries(&s2);
        let from = b2[0] + max;
        let tail1: Vec<usize> = b1.iter().copied().filter(|&p| p + 1 >= from).collect();
        let tail2: Vec<usize> = b2.iter().copied().filter(|&p| p >= from).map(|p| p - 1).collect();
        prop_assert_eq!(tail1, tail2);
    }

    #[test]
    fn mutations_conserve_length(seed in any::<u64>(), len in 1usize..5000, frac in 0.0f64..1.0) {
        let input = test_bytes(seed, len);
        let del = MutationSpec::new(MutationPattern::TailDelete, frac, seed);
        let out = mutate(&input, &del).unwrap();
        prop_assert_eq!(out.len() + del.edit_len(len), len);
        prop_assert_eq!(&out[..], &input[..out.len()]);
        let ins = MutationSpec::new(MutationPattern::MidInsert, frac, seed);
        let out = mutate(&input, &ins).unwrap();
        prop_assert_eq!(out.len() - ins.edit_len(len), len);
        let head = MutationSpec::new(MutationPattern::HeadModify, frac, seed);
        let out = mutate(&input, &head).unwrap();
        prop_assert_eq!(&out[head.edit_len(len)..], &input[head.edit_len(len)..]);
        for p in [del, ins, head] {
            prop_assert_eq!(mutate(&input, &p).unwrap(), mutate(&input, &p).unwrap());
        }
    }

    #[test]
    fn finesse_depends_only_on_group_ranks(seed in any::<u64>(), g in 0usize..4, a in 0usize..3, b in 0usize..3) {
        // Swapping two equal-size sub-chunks inside one group keeps every
        // group's sorted maxima, so the digests cannot change.
        let sub = 200;
        let data = test_bytes(seed, 12 * sub);
        let mut swapped = data.clone();
        let (i, j) = (3 * g + a, 3 * g + b);
        let (si, sj) = (data[i * sub..(i + 1) * sub].to_vec(), data[j * sub..(j + 1) * sub].to_vec());
        swapped[i * sub..(i + 1) * sub].copy_from_slice(&sj);
        swapped[j * sub..(j + 1) * sub].copy_from_slice(&si);
        let cfg = FinesseConfig::default();
        prop_assert_eq!(finesse_superfeature(&data, &cfg).unwrap(), finesse_superfeature(&swapped, &cfg).unwrap());
    }

    #[test]
    fn permuting_subchunk_digests_changes_the_feature(seed in any::<u64>(), k in 5usize..40, order in 1usize..4) {
        let digests: Vec<u64> = (1..=k as u64).map(|n| splitmix_nth(seed, n)).collect();
        let mut perm = digests.clone();
        let i = (splitmix_nth(seed, 1000) % k as u64) as usize;
        let j = (i + 1 + (splitmix_nth(seed, 1001) % (k as u64 - 1)) as usize) % k;
        perm.swap(i, j);
        let (s1, s2) = (shingle_set(&digests, order), shingle_set(&perm, order));
        let mut a = s1.clone();
        let mut b = s2.clone();
        a.sort();
        b.sort();
        prop_assert_ne!(a, b);
        let family = FeatureConfig::default().hash_family();
        prop_assert_ne!(embed_shingles(&s1, &family), embed_shingles(&s2, &family));
    }

    #[test]
    fn nn_lookup_is_scale_invariant_and_self_similar(seed in any::<u64>(), n in 1usize..40, scale in 1e-3f64..1e3) {
        let dim = 6;
        let vecs: Vec<Vec<f64>> = (0..n as u64)
            .map(|i| (0..dim as u64).map(|j| (splitmix_nth(seed ^ i, j + 1) as i64) as f64 / 2f64.powi(63)).collect())
            .collect();
        let mut idx = VectorIndex::new(dim, 0.7).unwrap();
        for (i, v) in vecs.iter().enumerate() {
            idx.insert(i as u64, v).unwrap();
        }
        for (i, v) in vecs.iter().enumerate() {
            let m = idx.nn_lookup(999, v).unwrap();
            prop_assert!((m.similarity_score - 1.0).abs() <= 1e-9);
            prop_assert_eq!(m.base_chunk_id, Some(i as u64));
            let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
            let s = idx.nn_lookup(999, &scaled).unwrap();
            prop_assert_eq!(s.base_chunk_id, m.base_chunk_id);
            prop_assert!((s.similarity_score - m.similarity_score).abs() <= 1e-12);
        }
    }

    #[test]
    fn firstfit_ignores_non_matching_entries(seed in any::<u64>(), n in 1usize..60, keep_mask in any::<u64>()) {
        // Small digest alphabet so matches are common.
        let sf = |s: u64, i: u64| SuperFeature {
            scheme: Scheme::Finesse,
            digests: (1..=3).map(|d| splitmix_nth(s ^ i, d) % 8).collect(),
        };
        let entries: Vec<(u64, SuperFeature)> = (0..n as u64).map(|i| (i, sf(seed, i))).collect();
        let q = sf(seed, 10_000);
        let matches = |e: &SuperFeature| e.digests.iter().zip(&q.digests).any(|(a, b)| a == b);
        let mut full = SuperFeatureIndex::new(Scheme::Finesse, 3);
        let mut sub = SuperFeatureIndex::new(Scheme::Finesse, 3);
        for (i, (id, e)) in entries.iter().enumerate() {
            full.insert(*id, e).unwrap();
            if matches(e) || keep_mask >> (i % 64) & 1 == 1 {
                sub.insert(*id, e).unwrap();
            }
        }
        prop_assert_eq!(full.firstfit_lookup(1, &q).unwrap(), sub.firstfit_lookup(1, &q).unwrap());
    }

    #[test]
    fn forward_is_linear(seed in any::<u64>(), a in -10.0f64..10.0) {
        let cfg = ModelConfig { dim_m: 5, dim_d: 3, context_k: 2, rng_seed: seed, ..ModelConfig::default() };
        let model = ContextModel::initialize(cfg).unwrap();
        let ctx: Vec<Vec<f64>> = (0..4u64).map(|c| (0..5u64).map(|j| (splitmix_nth(seed, c * 5 + j + 1) as i64) as f64 / 2f64.powi(63)).collect()).collect();
        let sample = |s: f64| TrainingSample {
            target_id: 0,
            context_ids: vec![Some(1); 4],
            context_vectors: ctx.iter().map(|v| v.iter().map(|x| x * s).collect()).collect(),
            target_vector: vec![0.0; 5],
        };
        let (h1, o1) = model.forward(&sample(1.0)).unwrap();
        let (ha, oa) = model.forward(&sample(a)).unwrap();
        for (x, y) in h1.iter().zip(&ha).chain(o1.iter().zip(&oa)) {
            prop_assert!((a * x - y).abs() <= 1e-12);
        }
        let p1 = model.predict(&ctx[0]).unwrap();
        let pa = model.predict(&ctx[0].iter().map(|x| x * a).collect::<Vec<_>>()).unwrap();
        for (x, y) in p1.iter().zip(&pa) {
            prop_assert!((a * x - y).abs() <= 1e-12 * (1.0 + x.abs() * a.abs()));
        }
    }

    #[test]
    fn model_bytes_round_trip(seed in any::<u64>(), m in 1usize..8, d in 1usize..8) {
        let cfg = ModelConfig { dim_m: m, dim_d: d, rng_seed: seed, ..ModelConfig::default() };
        let model = ContextModel::initialize(cfg).unwrap();
        let bytes = model.to_bytes();
        let back = ContextModel::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.w(), model.w());
        prop_assert_eq!(back.u(), model.u());
        let mut bad = bytes.clone();
        let at = (seed as usize) % bad.len();
        bad[at] ^= 1;
        prop_assert!(ContextModel::from_bytes(&bad).is_err());
    }

    #[test]
    fn index_records_round_trip(seed in any::<u64>(), kind in 0u8..3, has_ref in any::<bool>()) {
        let r = IndexRecord {
            digest: Digest256::of(&seed.to_le_bytes()),
            chunk_id: seed >> 3,
            reference: has_ref.then_some(seed >> 5),
            payload_offset: splitmix_nth(seed, 1) >> 2,
            payload_len: splitmix_nth(seed, 2) as u32,
            kind: [RecordKind::Unique, RecordKind::Duplicate, RecordKind::Similar][kind as usize],
        };
        prop_assert_eq!(IndexRecord::from_bytes(&r.to_bytes(), 0).unwrap(), r);
    }

    #[test]
    fn superfeature_records_round_trip(id in any::<u64>(), ds in proptest::collection::vec(any::<u64>(), 0..8), fin in any::<bool>()) {
        let sf = SuperFeature { scheme: if fin { Scheme::Finesse } else { Scheme::NTransform }, digests: ds };
        let rec = sf.to_record(id);
        let (id2, sf2, used) = SuperFeature::from_record(&rec).unwrap();
        prop_assert_eq!((id2, sf2, used), (id, sf, rec.len()));
    }

    #[test]
    fn csv_round_trips(
        det in "[a-z ,\"]{0,12}",
        nums in proptest::collection::vec(any::<u32>(), 10),
        fs in proptest::collection::vec(0.0f64..1e6, 7),
    ) {
        let r = DedupReport {
            detector: det,
            avg_chunk_size: nums[0] as usize,
            dimension: nums[1] as usize,
            bytes_before: nums[2] as u64,
            bytes_after: nums[3] as u64,
            unique_bytes: nums[4] as u64,
            patch_bytes: nums[5] as u64,
            metadata_bytes: nums[6] as u64,
            dcr: fs[0],
            dcr_no_metadata: fs[1],
            chunk_count: nums[7] as u64,
            duplicate_count: nums[8] as u64,
            similar_count: nums[9] as u64,
            unique_count: 0,
            phase_timings: PhaseTimings { chunking: fs[2], feature: fs[3], train: fs[4], lookup: fs[5], delta: fs[6] },
        };
        prop_assert_eq!(parse_csv(&render_csv(std::slice::from_ref(&r)).unwrap()).unwrap(), vec![r]);
    }
}

#[test]
fn mean_chunk_size_follows_the_average() {
    for avg in [4096usize, 16384] {
        let data = Bytes::from(test_bytes(avg as u64, 8 << 20));
        let chunks = chunk_stream(&data, &ChunkingConfig::with_avg(avg)).unwrap();
        let mean = data.len() as f64 / chunks.len() as f64;
        assert!((mean - avg as f64).abs() <= 0.3 * avg as f64, "avg {avg}: mean {mean}");
    }
}

#[test]
fn empty_stream_has_no_chunks() {
    assert!(chunk_stream(&Bytes::new(), &ChunkingConfig::default()).unwrap().is_empty());
}
