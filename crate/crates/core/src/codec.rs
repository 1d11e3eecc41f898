//! Fixed-point quantization of model updates, masking over `Z_p`, and the
//! packing of per-epoch seeds into plaintext coefficient arrays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shprg::{MaskStream, Seed, ShprgParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    /// Bit width of one quantized entry.
    pub w: u32,
    pub m_min: f64,
    pub m_max: f64,
    pub n_parties: usize,
    pub log_p: u32,
}

impl QuantParams {
    pub fn p(&self) -> u64 {
        1u64 << self.log_p
    }

    /// Largest party count for which the sum plus the `N - 1` unmasking
    /// window fits in `Z_p`: `p >> w`.
    pub fn max_clients(&self) -> u64 {
        max_clients(self.log_p, self.w)
    }

    /// `N (2^w - 1)`.
    pub fn max_sum(&self) -> i64 {
        self.n_parties as i64 * ((1i64 << self.w) - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m_min.is_finite() && self.m_max.is_finite() && self.m_min < self.m_max) {
            return Err(Error::InvalidParams(format!(
                "clipping range [{}, {}) is empty or non-finite",
                self.m_min, self.m_max
            )));
        }
        if self.w == 0 || self.w > 32 {
            return Err(Error::InvalidParams(format!("bit width {} outside [1, 32]", self.w)));
        }
        if self.log_p == 0 || self.log_p > 63 {
            return Err(Error::InvalidParams(format!("log2 p = {} outside [1, 63]", self.log_p)));
        }
        if self.n_parties == 0 {
            return Err(Error::InvalidParams("need at least one party".into()));
        }
        if self.n_parties as u64 > self.max_clients() {
            return Err(Error::InvalidParams(format!(
                "p <= N(2^w-1) + (N-1): N = {} exceeds max clients {} for p = 2^{}, w = {}",
                self.n_parties,
                self.max_clients(),
                self.log_p,
                self.w
            )));
        }
        Ok(())
    }

    /// One quantization step in model units, `2^-w (m_max - m_min)`.
    pub fn step(&self) -> f64 {
        (self.m_max - self.m_min) / (1u64 << self.w) as f64
    }
}

pub fn max_clients(log_p: u32, w: u32) -> u64 {
    if w >= log_p {
        0
    } else {
        1u64 << (log_p - w)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedVector {
    pub values: Vec<u32>,
    /// Entries that fell outside `[m_min, m_max)` and were clipped.
    pub clipped: usize,
}

/// Sum of quantized vectors after unmasking; may carry small negative noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateVector {
    pub values: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedVector {
    pub values: Vec<u64>,
}

pub fn quantize(m: &[f64], qp: &QuantParams) -> Result<QuantizedVector> {
    let top = (1u64 << qp.w) - 1;
    let scale = (1u64 << qp.w) as f64 / (qp.m_max - qp.m_min);
    let mut clipped = 0;
    let mut values = Vec::with_capacity(m.len());
    for (i, &x) in m.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite(i));
        }
        let v = if x < qp.m_min {
            clipped += 1;
            0
        } else if x >= qp.m_max {
            clipped += 1;
            top
        } else {
            (((x - qp.m_min) * scale).floor() as u64).min(top)
        };
        values.push(v as u32);
    }
    Ok(QuantizedVector { values, clipped })
}

/// `2^-w (m_max - m_min) x + N m_min`, rejecting sums outside what `N`
/// honest parties can produce (allowing the `-(N-1)` homomorphism noise).
pub fn dequantize(x0: &AggregateVector, qp: &QuantParams) -> Result<Vec<f64>> {
    let n = qp.n_parties as i64;
    let (lo, hi) = (-(n - 1), qp.max_sum());
    let step = qp.step();
    let offset = n as f64 * qp.m_min;
    x0.values
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value < lo || value > hi {
                return Err(Error::Overflow {
                    index,
                    value,
                    min: lo,
                    max: hi,
                });
            }
            Ok(step * value as f64 + offset)
        })
        .collect()
}

/// `(x + g) mod p`.
pub fn mask(x: &QuantizedVector, g: &MaskStream, p: u64) -> Result<MaskedVector> {
    if x.values.len() != g.values.len() {
        return Err(Error::LengthMismatch {
            expected: x.values.len(),
            got: g.values.len(),
        });
    }
    let m = p - 1;
    Ok(MaskedVector {
        values: x
            .values
            .iter()
            .zip(&g.values)
            .map(|(&a, &b)| (a as u64).wrapping_add(b) & m)
            .collect(),
    })
}

/// Sum of masked uploads modulo `p`.
pub fn aggregate_masked(uploads: &[MaskedVector], p: u64) -> Result<MaskedVector> {
    let first = uploads
        .first()
        .ok_or_else(|| Error::InvalidParams("no masked uploads".into()))?;
    let mut acc = first.values.clone();
    for u in &uploads[1..] {
        if u.values.len() != acc.len() {
            return Err(Error::LengthMismatch {
                expected: acc.len(),
                got: u.values.len(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(&u.values) {
            *a = a.wrapping_add(v) & (p - 1);
        }
    }
    Ok(MaskedVector { values: acc })
}

/// `(y0 - g0) mod p`, with values in `(p - N, p)` read as small negatives.
pub fn unmask(y0: &MaskedVector, g0: &MaskStream, qp: &QuantParams) -> Result<AggregateVector> {
    if y0.values.len() != g0.values.len() {
        return Err(Error::LengthMismatch {
            expected: y0.values.len(),
            got: g0.values.len(),
        });
    }
    let p = qp.p();
    let window = p - qp.n_parties as u64;
    Ok(AggregateVector {
        values: y0
            .values
            .iter()
            .zip(&g0.values)
            .map(|(&y, &g)| {
                let d = y.wrapping_sub(g) & (p - 1);
                if d > window {
                    d as i64 - p as i64
                } else {
                    d as i64
                }
            })
            .collect(),
    })
}

/// Wire size of `len` masked values at `log_p` bits each.
pub fn masked_wire_len(len: usize, log_p: u32) -> usize {
    (len * log_p as usize).div_ceil(8)
}

/// Values packed back to back at `log_p` bits each, little-endian bit
/// order. For byte-multiple widths this is `ceil(log_p/8)` little-endian
/// bytes per value.
pub fn encode_masked(v: &MaskedVector, log_p: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(masked_wire_len(v.values.len(), log_p));
    let mut acc: u128 = 0;
    let mut bits = 0u32;
    for &x in &v.values {
        acc |= (x as u128) << bits;
        bits += log_p;
        while bits >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            bits -= 8;
        }
    }
    if bits > 0 {
        out.push(acc as u8);
    }
    out
}

pub fn decode_masked(bytes: &[u8], len: usize, log_p: u32) -> Result<MaskedVector> {
    if bytes.len() != masked_wire_len(len, log_p) {
        return Err(Error::Decode(format!(
            "masked vector of {len} values needs {} bytes, got {}",
            masked_wire_len(len, log_p),
            bytes.len()
        )));
    }
    let mask = (1u128 << log_p) - 1;
    let mut values = Vec::with_capacity(len);
    let mut acc: u128 = 0;
    let mut bits = 0u32;
    let mut iter = bytes.iter();
    for _ in 0..len {
        while bits < log_p {
            acc |= (*iter.next().unwrap() as u128) << bits;
            bits += 8;
        }
        values.push((acc & mask) as u64);
        acc >>= log_p;
        bits -= log_p;
    }
    if acc != 0 {
        return Err(Error::Decode("nonzero padding bits".into()));
    }
    Ok(MaskedVector { values })
}

/// Flattens `seeds` epoch-major and cuts the stream into zero-padded
/// arrays of `n` coefficients, `ceil(mu * tau / n)` of them.
pub fn pack_seeds(seeds: &[Seed], n: usize) -> Result<Vec<Vec<u64>>> {
    let mu = seeds.first().map_or(0, Seed::len);
    let mut flat = Vec::with_capacity(mu * seeds.len());
    for s in seeds {
        if s.len() != mu {
            return Err(Error::LengthMismatch {
                expected: mu,
                got: s.len(),
            });
        }
        for &e in s.entries() {
            let e = u64::try_from(e).map_err(|_| {
                Error::OutOfRange(format!("seed entry {e} does not fit a 64-bit plaintext slot"))
            })?;
            flat.push(e);
        }
    }
    Ok(flat
        .chunks(n)
        .map(|c| {
            let mut row = c.to_vec();
            row.resize(n, 0);
            row
        })
        .collect())
}

/// Inverse of [`pack_seeds`]; entries are reduced modulo the PRG's `q`,
/// which divides the plaintext modulus.
pub fn unpack_seeds(arrays: &[Vec<u64>], params: &ShprgParams, tau: usize) -> Result<Vec<Seed>> {
    let mu = params.mu;
    let n = arrays.first().map_or(0, Vec::len);
    let expected = (mu * tau).div_ceil(n.max(1));
    if arrays.len() != expected || arrays.iter().any(|a| a.len() != n) {
        return Err(Error::LengthMismatch {
            expected,
            got: arrays.len(),
        });
    }
    let mask = params.q() - 1;
    let flat: Vec<u128> = arrays.iter().flatten().map(|&v| v as u128 & mask).collect();
    flat[..mu * tau]
        .chunks(mu)
        .map(|c| Seed::new(c.to_vec(), params))
        .collect()
}

/// The PRG modulus must divide the plaintext modulus so seed sums taken
/// modulo `t` reduce to the right value modulo `q`.
pub fn check_seed_modulus(params: &ShprgParams, t: u128) -> Result<()> {
    if !t.is_power_of_two() || params.log_q > t.trailing_zeros() {
        return Err(Error::InvalidParams(format!(
            "PRG modulus 2^{} does not divide plaintext modulus {t}",
            params.log_q
        )));
    }
    Ok(())
}
