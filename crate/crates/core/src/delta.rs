//! Copy/add delta encoding of a chunk against a base chunk.
//!
//! Every 16-byte window of the base is hashed into a table. The encoder walks
//! the target with the same rolling hash; on a verified hit it extends the
//! match backwards over pending literals and forwards as far as the bytes
//! agree, emits the literals and a `Copy`, and jumps past the match.
//!
//! Wire format: `CARDDLT1`, the SHA-256 of the base, then instructions until
//! end of input. `Add` is `0x00 len bytes`, `Copy` is `0x01 offset len`, with
//! `len` and `offset` as LEB128 varints.

use std::collections::HashMap;

use crate::{CardError, Digest256, Result};

pub const PATCH_MAGIC: &[u8; 8] = b"CARDDLT1";
pub const PATCH_HEADER_LEN: usize = 8 + 32;
pub const MIN_MATCH: usize = 16;

const OP_ADD: u8 = 0x00;
const OP_COPY: u8 = 0x01;
/// Candidate positions kept per hash bucket.
const MAX_CANDIDATES: usize = 8;
const ROLL_BASE: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Copy { offset: u64, len: u64 },
    Add(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaPatch {
    pub base_digest: Digest256,
    pub instructions: Vec<Instruction>,
}

impl DeltaPatch {
    /// Serialized length, header included.
    pub fn encoded_size(&self) -> usize {
        PATCH_HEADER_LEN + self.body_size()
    }

    /// Serialized length of the instruction stream alone.
    pub fn body_size(&self) -> usize {
        self.instructions
            .iter()
            .map(|i| match i {
                Instruction::Add(b) => 1 + varint_len(b.len() as u64) + b.len(),
                Instruction::Copy { offset, len } => 1 + varint_len(*offset) + varint_len(*len),
            })
            .sum()
    }

    pub fn target_len(&self) -> u64 {
        self.instructions
            .iter()
            .map(|i| match i {
                Instruction::Add(b) => b.len() as u64,
                Instruction::Copy { len, .. } => *len,
            })
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_size());
        out.extend_from_slice(PATCH_MAGIC);
        out.extend_from_slice(&self.base_digest.0);
        for i in &self.instructions {
            match i {
                Instruction::Add(b) => {
                    out.push(OP_ADD);
                    put_varint(&mut out, b.len() as u64);
                    out.extend_from_slice(b);
                }
                Instruction::Copy { offset, len } => {
                    out.push(OP_COPY);
                    put_varint(&mut out, *offset);
                    put_varint(&mut out, *len);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PATCH_HEADER_LEN {
            return Err(CardError::CorruptPatch(format!(
                "{} bytes is shorter than the {PATCH_HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..8] != PATCH_MAGIC {
            return Err(CardError::CorruptPatch("bad magic".into()));
        }
        let base_digest = Digest256(bytes[8..40].try_into().unwrap());
        let mut pos = PATCH_HEADER_LEN;
        let mut instructions = Vec::new();
        while pos < bytes.len() {
            let op = bytes[pos];
            pos += 1;
            match op {
                OP_ADD => {
                    let len = get_varint(bytes, &mut pos)? as usize;
                    let end = pos
                        .checked_add(len)
                        .filter(|&e| e <= bytes.len())
                        .ok_or_else(|| CardError::CorruptPatch(format!("Add of {len} bytes at offset {pos} runs past end")))?;
                    instructions.push(Instruction::Add(bytes[pos..end].to_vec()));
                    pos = end;
                }
                OP_COPY => {
                    let offset = get_varint(bytes, &mut pos)?;
                    let len = get_varint(bytes, &mut pos)?;
                    instructions.push(Instruction::Copy { offset, len });
                }
                other => {
                    return Err(CardError::CorruptPatch(format!(
                        "unknown opcode {other:#04x} at offset {}",
                        pos - 1
                    )))
                }
            }
        }
        Ok(DeltaPatch {
            base_digest,
            instructions,
        })
    }
}

/// Bytes a patch adds to the store.
pub fn patch_overhead(patch: &DeltaPatch) -> usize {
    patch.encoded_size()
}

fn varint_len(mut v: u64) -> usize {
    let mut n = 1;
    while v >= 0x80 {
        v >>= 7;
        n += 1;
    }
    n
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn get_varint(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let start = *pos;
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *bytes
            .get(*pos)
            .ok_or_else(|| CardError::CorruptPatch(format!("truncated varint at offset {start}")))?;
        *pos += 1;
        v |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(CardError::CorruptPatch(format!("overlong varint at offset {start}")))
}

struct Roller {
    out_factor: u64,
}

impl Roller {
    fn new() -> Self {
        let mut f = 1u64;
        for _ in 1..MIN_MATCH {
            f = f.wrapping_mul(ROLL_BASE);
        }
        Roller { out_factor: f }
    }

    fn hash(&self, w: &[u8]) -> u64 {
        w.iter().fold(0u64, |h, &b| h.wrapping_mul(ROLL_BASE).wrapping_add(b as u64 + 1))
    }

    fn roll(&self, h: u64, out: u8, inp: u8) -> u64 {
        h.wrapping_sub((out as u64 + 1).wrapping_mul(self.out_factor))
            .wrapping_mul(ROLL_BASE)
            .wrapping_add(inp as u64 + 1)
    }
}

fn push_add(ins: &mut Vec<Instruction>, bytes: &[u8]) {
    if !bytes.is_empty() {
        ins.push(Instruction::Add(bytes.to_vec()));
    }
}

/// Greedy copy/add encoding of `target` against `base`.
///
/// Falls back to a single `Add` if the greedy stream would be larger.
pub fn delta_encode(target: &[u8], base: &[u8]) -> DeltaPatch {
    let base_digest = Digest256::of(base);
    let mut ins = Vec::new();
    if base.len() >= MIN_MATCH && target.len() >= MIN_MATCH {
        let roller = Roller::new();
        let mut table: HashMap<u64, Vec<u32>> = HashMap::with_capacity(base.len());
        let mut h = roller.hash(&base[..MIN_MATCH]);
        for p in 0..=base.len() - MIN_MATCH {
            if p > 0 {
                h = roller.roll(h, base[p - 1], base[p + MIN_MATCH - 1]);
            }
            let slot = table.entry(h).or_default();
            if slot.len() < MAX_CANDIDATES {
                slot.push(p as u32);
            }
        }

        let mut lit_start = 0;
        let mut i = 0;
        let mut h = roller.hash(&target[..MIN_MATCH]);
        while i + MIN_MATCH <= target.len() {
            let mut best: Option<(usize, usize, usize)> = None; // (base_pos, back, fwd)
            if let Some(cands) = table.get(&h) {
                for &p in cands {
                    let p = p as usize;
                    if base[p..p + MIN_MATCH] != target[i..i + MIN_MATCH] {
                        continue;
                    }
                    let fwd = MIN_MATCH
                        + base[p + MIN_MATCH..]
                            .iter()
                            .zip(&target[i + MIN_MATCH..])
                            .take_while(|(a, b)| a == b)
                            .count();
                    let back = (1..=(i - lit_start).min(p))
                        .take_while(|&k| base[p - k] == target[i - k])
                        .count();
                    if best.is_none_or(|(_, b0, f0)| back + fwd > b0 + f0) {
                        best = Some((p, back, fwd));
                    }
                }
            }
            match best {
                Some((p, back, fwd)) => {
                    push_add(&mut ins, &target[lit_start..i - back]);
                    ins.push(Instruction::Copy {
                        offset: (p - back) as u64,
                        len: (back + fwd) as u64,
                    });
                    i += fwd;
                    lit_start = i;
                    if i + MIN_MATCH <= target.len() {
                        h = roller.hash(&target[i..i + MIN_MATCH]);
                    }
                }
                None => {
                    if i + MIN_MATCH < target.len() {
                        h = roller.roll(h, target[i], target[i + MIN_MATCH]);
                    }
                    i += 1;
                }
            }
        }
        push_add(&mut ins, &target[lit_start..]);
    } else {
        push_add(&mut ins, target);
    }
    let patch = DeltaPatch {
        base_digest,
        instructions: ins,
    };
    let raw = DeltaPatch {
        base_digest,
        instructions: if target.is_empty() {
            Vec::new()
        } else {
            vec![Instruction::Add(target.to_vec())]
        },
    };
    if patch.body_size() > raw.body_size() {
        raw
    } else {
        patch
    }
}

/// Rebuild the target from `base`.
pub fn delta_decode(patch: &DeltaPatch, base: &[u8]) -> Result<Vec<u8>> {
    let actual = Digest256::of(base);
    if actual != patch.base_digest {
        return Err(CardError::BaseMismatch {
            expected: patch.base_digest.to_hex(),
            actual: actual.to_hex(),
        });
    }
    let mut out = Vec::with_capacity(patch.target_len().min(1 << 30) as usize);
    for (n, i) in patch.instructions.iter().enumerate() {
        match i {
            Instruction::Add(b) => out.extend_from_slice(b),
            Instruction::Copy { offset, len } => {
                let end = offset.checked_add(*len).filter(|&e| e <= base.len() as u64).ok_or_else(|| {
                    CardError::CorruptPatch(format!(
                        "instruction {n}: Copy({offset}, {len}) exceeds base length {}",
                        base.len()
                    ))
                })?;
                out.extend_from_slice(&base[*offset as usize..end as usize]);
            }
        }
    }
    Ok(out)
}

/// Parse and apply a serialized patch.
pub fn apply_patch_bytes(patch: &[u8], base: &[u8]) -> Result<Vec<u8>> {
    delta_decode(&DeltaPatch::from_bytes(patch)?, base)
}
