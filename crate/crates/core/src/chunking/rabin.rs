//! Rabin fingerprints over a sliding byte window.
//!
//! A window `b_0 .. b_{w-1}` is read as the polynomial
//! `sum b_i * x^(8 (w - 1 - i))` over GF(2) and reduced modulo the
//! irreducible polynomial `x^64 + x^4 + x^3 + x + 1`. Sliding one byte
//! removes the outgoing byte's term and multiplies by `x^8`, both through
//! 256-entry tables.

use crate::{CardError, Result};

/// Low 64 bits of the reduction polynomial (the `x^64` term is implicit).
pub const RABIN_POLY: u64 = 0x1b;

pub const DEFAULT_WINDOW: usize = 48;

/// Carry-less product of a byte and the reduction polynomial's low part.
///
/// `top * x^64 mod P = top * RABIN_POLY`; with `deg(top) < 8` and
/// `deg(RABIN_POLY) = 4` the product fits in 12 bits, so no second reduction.
const fn shift_entry(top: u64) -> u64 {
    let mut acc = 0u64;
    let mut bit = 0;
    while bit < 8 {
        if (top >> bit) & 1 == 1 {
            acc ^= RABIN_POLY << bit;
        }
        bit += 1;
    }
    acc
}

const SHIFT_TABLE: [u64; 256] = {
    let mut t = [0u64; 256];
    let mut i = 0;
    while i < 256 {
        t[i] = shift_entry(i as u64);
        i += 1;
    }
    t
};

/// Multiply a reduced fingerprint by `x^8` and add `byte`.
#[inline(always)]
fn append(fp: u64, byte: u8) -> u64 {
    ((fp << 8) | byte as u64) ^ SHIFT_TABLE[(fp >> 56) as usize]
}

#[derive(Debug, Clone)]
pub struct RabinFingerprinter {
    window: usize,
    /// `b * x^(8 (w - 1)) mod P` for every byte value `b`.
    out_table: Box<[u64; 256]>,
}

impl RabinFingerprinter {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(CardError::param("rolling window must be at least 1 byte"));
        }
        let mut out_table = Box::new([0u64; 256]);
        for (b, slot) in out_table.iter_mut().enumerate() {
            let mut v = b as u64;
            for _ in 1..window {
                v = append(v, 0);
            }
            *slot = v;
        }
        Ok(RabinFingerprinter { window, out_table })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Fingerprint of `data` computed from scratch (no sliding).
    pub fn fingerprint(&self, data: &[u8]) -> u64 {
        data.iter().fold(0, |fp, &b| append(fp, b))
    }

    /// Call `f` with the fingerprint of every full window of `data`, in order.
    #[inline]
    pub fn for_each(&self, data: &[u8], mut f: impl FnMut(u64)) {
        let w = self.window;
        if data.len() < w {
            return;
        }
        let mut fp = self.fingerprint(&data[..w]);
        f(fp);
        for i in w..data.len() {
            fp ^= self.out_table[data[i - w] as usize];
            fp = append(fp, data[i]);
            f(fp);
        }
    }

    /// Largest window fingerprint of `data`, if it holds at least one window.
    pub fn max_fingerprint(&self, data: &[u8]) -> Option<u64> {
        let mut best = None;
        self.for_each(data, |fp| {
            best = Some(best.map_or(fp, |b: u64| b.max(fp)));
        });
        best
    }

    /// One fingerprint per window position.
    pub fn fingerprints(&self, data: &[u8]) -> Result<Vec<u64>> {
        if data.len() < self.window {
            return Err(CardError::param(format!(
                "window {} exceeds span length {}",
                self.window,
                data.len()
            )));
        }
        let mut out = Vec::with_capacity(data.len() - self.window + 1);
        self.for_each(data, |fp| out.push(fp));
        Ok(out)
    }
}
