//! LWR-based almost seed-homomorphic PRG `G(s) = floor(A^T s * p / q)`.
//!
//! `A` (`mu x M` over `Z_q`) is never stored whole: its entries are read
//! from a BLAKE3 XOF keyed by the CRS, column-major, so any column range can
//! be derived independently. Both moduli are powers of two, so reduction is
//! masking and rounding is a right shift.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wire::Reader;

const MATRIX_DOMAIN: &[u8] = b"dhsa.shprg.matrix.v1";
// columns derived per XOF read
const CHUNK_COLS: usize = 64;

/// Parameter presets for the masking PRG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    A,
    B,
    C,
    D,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::A, Setting::B, Setting::C, Setting::D];

    /// `(mu, log2 p, log2 q)`.
    pub fn dimensions(self) -> (usize, u32, u32) {
        match self {
            Setting::A => (512, 24, 54),
            Setting::B => (512, 32, 64),
            Setting::C => (256, 24, 72),
            Setting::D => (1024, 32, 48),
        }
    }

    /// Estimated LWR hardness, log2 (taken as given).
    pub fn security_bits(self) -> u32 {
        match self {
            Setting::A => 233,
            Setting::B => 128,
            Setting::C => 132,
            Setting::D => 244,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Setting::A => "A",
            Setting::B => "B",
            Setting::C => "C",
            Setting::D => "D",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Setting::A),
            "B" => Ok(Setting::B),
            "C" => Ok(Setting::C),
            "D" => Ok(Setting::D),
            other => Err(Error::InvalidParams(format!("unknown setting {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShprgParams {
    /// Seed dimension.
    pub mu: usize,
    pub log_p: u32,
    pub log_q: u32,
    pub crs: [u8; 32],
    pub setting: Option<Setting>,
}

impl ShprgParams {
    pub fn new(mu: usize, log_p: u32, log_q: u32, crs: [u8; 32]) -> Result<Self> {
        let params = Self {
            mu,
            log_p,
            log_q,
            crs,
            setting: None,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn preset(setting: Setting, crs: [u8; 32]) -> Self {
        let (mu, log_p, log_q) = setting.dimensions();
        Self {
            mu,
            log_p,
            log_q,
            crs,
            setting: Some(setting),
        }
    }

    /// Same matrix and seed space with a different rounding modulus.
    pub fn with_log_p(mut self, log_p: u32) -> Result<Self> {
        self.log_p = log_p;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu == 0 {
            return Err(Error::InvalidParams("seed dimension must be positive".into()));
        }
        if self.log_p == 0 || self.log_p > 63 {
            return Err(Error::InvalidParams(format!(
                "log2 p = {} outside [1, 63]",
                self.log_p
            )));
        }
        if self.log_q <= self.log_p || self.log_q > 128 {
            return Err(Error::InvalidParams(format!(
                "need p < q <= 2^128, got log2 p = {}, log2 q = {}",
                self.log_p, self.log_q
            )));
        }
        let ratio_bits = self.log_q - self.log_p;
        if ratio_bits < 64 && (1u64 << ratio_bits) <= self.mu as u64 {
            return Err(Error::InvalidParams(format!(
                "q/p = 2^{ratio_bits} must exceed mu = {}",
                self.mu
            )));
        }
        Ok(())
    }

    pub fn p(&self) -> u64 {
        1u64 << self.log_p
    }

    pub fn q(&self) -> u128 {
        if self.log_q == 128 {
            u128::MAX
        } else {
            1u128 << self.log_q
        }
    }

    fn q_mask(&self) -> u128 {
        if self.log_q == 128 {
            u128::MAX
        } else {
            (1u128 << self.log_q) - 1
        }
    }

    fn wide(&self) -> bool {
        self.log_q > 64
    }

    fn word_bytes(&self) -> usize {
        if self.wide() {
            16
        } else {
            8
        }
    }

    fn xof(&self) -> blake3::OutputReader {
        let mut hasher = blake3::Hasher::new_keyed(&self.crs);
        hasher.update(MATRIX_DOMAIN);
        hasher.update(&(self.mu as u64).to_le_bytes());
        hasher.update(&self.log_q.to_le_bytes());
        hasher.finalize_xof()
    }
}

/// Masking seed in `Z_q^mu`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Seed {
    entries: Vec<u128>,
}

impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Seed(mu={}, ..)", self.entries.len())
    }
}

impl Seed {
    pub fn new(entries: Vec<u128>, params: &ShprgParams) -> Result<Self> {
        if entries.len() != params.mu {
            return Err(Error::LengthMismatch {
                expected: params.mu,
                got: entries.len(),
            });
        }
        if let Some(bad) = entries.iter().find(|&&e| e & !params.q_mask() != 0) {
            return Err(Error::OutOfRange(format!(
                "seed entry {bad} not below 2^{}",
                params.log_q
            )));
        }
        Ok(Self { entries })
    }

    pub fn zero(params: &ShprgParams) -> Self {
        Self {
            entries: vec![0; params.mu],
        }
    }

    pub fn entries(&self) -> &[u128] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `mu` little-endian 8-byte words; only defined for `q <= 2^64`.
    pub fn to_bytes(&self, params: &ShprgParams) -> Result<Vec<u8>> {
        if params.wide() {
            return Err(Error::InvalidParams(format!(
                "seed wire format needs q <= 2^64, got 2^{}",
                params.log_q
            )));
        }
        let mut out = Vec::with_capacity(8 * self.entries.len());
        for &e in &self.entries {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], params: &ShprgParams) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let entries = (0..params.mu)
            .map(|_| r.u64().map(u128::from))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::new(entries, params)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskStream {
    pub values: Vec<u64>,
}

/// `mu x count` slice of `A`, column-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatrixBlock {
    pub mu: usize,
    pub col_start: usize,
    pub cols: usize,
    pub entries: Vec<u128>,
}

impl MatrixBlock {
    pub fn get(&self, row: usize, col: usize) -> u128 {
        self.entries[col * self.mu + row]
    }
}

/// Deterministic columns `col_start .. col_start + col_count` of `A`.
pub fn derive_matrix_block(params: &ShprgParams, col_start: usize, col_count: usize) -> MatrixBlock {
    let mut raw = vec![0u8; col_count * params.mu * params.word_bytes()];
    fill_columns(params, col_start, &mut raw);
    let mask = params.q_mask();
    let entries = if params.wide() {
        raw.chunks_exact(16)
            .map(|w| u128::from_le_bytes(w.try_into().unwrap()) & mask)
            .collect()
    } else {
        raw.chunks_exact(8)
            .map(|w| u64::from_le_bytes(w.try_into().unwrap()) as u128 & mask)
            .collect()
    };
    MatrixBlock {
        mu: params.mu,
        col_start,
        cols: col_count,
        entries,
    }
}

fn fill_columns(params: &ShprgParams, col_start: usize, out: &mut [u8]) {
    let mut reader = params.xof();
    reader.set_position((col_start * params.mu * params.word_bytes()) as u64);
    reader.fill(out);
}

enum CachedColumns {
    Narrow(Vec<u64>),
    Wide(Vec<u128>),
}

/// Expansion engine bound to one parameter set, with an optional cache of a
/// column prefix of `A` shared by every caller.
pub struct Shprg {
    params: ShprgParams,
    cache: Option<(usize, CachedColumns)>,
}

impl fmt::Debug for Shprg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Shprg")
            .field("params", &self.params)
            .field("cached_cols", &self.cached_columns())
            .finish()
    }
}

impl Shprg {
    pub fn new(params: ShprgParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            cache: None,
        })
    }

    /// Materializes the first `cols` columns of `A` once.
    pub fn with_cached_prefix(mut self, cols: usize) -> Self {
        let block = derive_matrix_block(&self.params, 0, cols);
        let cached = if self.params.wide() {
            CachedColumns::Wide(block.entries)
        } else {
            CachedColumns::Narrow(block.entries.into_iter().map(|e| e as u64).collect())
        };
        self.cache = Some((cols, cached));
        self
    }

    pub fn cached_columns(&self) -> usize {
        self.cache.as_ref().map_or(0, |(c, _)| *c)
    }

    pub fn params(&self) -> &ShprgParams {
        &self.params
    }

    pub fn expand(&self, seed: &Seed, out_len: usize) -> Result<MaskStream> {
        Ok(self.expand_many(&[seed], out_len)?.pop().unwrap())
    }

    /// Expands several seeds in one pass over `A`.
    pub fn expand_many(&self, seeds: &[&Seed], out_len: usize) -> Result<Vec<MaskStream>> {
        self.expand_range(seeds, 0, out_len)
    }

    /// Output positions `col_start .. col_start + count` for each seed.
    pub fn expand_range(
        &self,
        seeds: &[&Seed],
        col_start: usize,
        count: usize,
    ) -> Result<Vec<MaskStream>> {
        if count == 0 {
            return Err(Error::InvalidParams("mask length must be at least 1".into()));
        }
        for s in seeds {
            if s.len() != self.params.mu {
                return Err(Error::LengthMismatch {
                    expected: self.params.mu,
                    got: s.len(),
                });
            }
        }
        let mut outs: Vec<Vec<u64>> = vec![Vec::with_capacity(count); seeds.len()];
        if self.params.wide() {
            self.expand_wide(seeds, col_start, count, &mut outs);
        } else {
            self.expand_narrow(seeds, col_start, count, &mut outs);
        }
        Ok(outs.into_iter().map(|values| MaskStream { values }).collect())
    }

    fn expand_narrow(&self, seeds: &[&Seed], col_start: usize, count: usize, outs: &mut [Vec<u64>]) {
        let mu = self.params.mu;
        let mask = self.params.q_mask() as u64;
        let shift = self.params.log_q - self.params.log_p;
        let narrow: Vec<Vec<u64>> = seeds
            .iter()
            .map(|s| s.entries.iter().map(|&e| e as u64).collect())
            .collect();
        let emit = |column: &[u64], outs: &mut [Vec<u64>]| {
            for (seed, out) in narrow.iter().zip(outs.iter_mut()) {
                let acc = column
                    .iter()
                    .zip(seed)
                    .fold(0u64, |acc, (&a, &s)| acc.wrapping_add(a.wrapping_mul(s)));
                out.push((acc & mask) >> shift);
            }
        };

        let mut col = col_start;
        let end = col_start + count;
        if let Some((cached, CachedColumns::Narrow(data))) = &self.cache {
            while col < end.min(*cached) {
                emit(&data[col * mu..(col + 1) * mu], outs);
                col += 1;
            }
        }
        if col == end {
            return;
        }
        let mut reader = self.params.xof();
        reader.set_position((col * mu * 8) as u64);
        let mut raw = vec![0u8; CHUNK_COLS * mu * 8];
        let mut words = vec![0u64; CHUNK_COLS * mu];
        while col < end {
            let cols = CHUNK_COLS.min(end - col);
            let bytes = &mut raw[..cols * mu * 8];
            reader.fill(bytes);
            for (w, b) in words.iter_mut().zip(bytes.chunks_exact(8)) {
                *w = u64::from_le_bytes(b.try_into().unwrap());
            }
            for c in 0..cols {
                emit(&words[c * mu..(c + 1) * mu], outs);
            }
            col += cols;
        }
    }

    fn expand_wide(&self, seeds: &[&Seed], col_start: usize, count: usize, outs: &mut [Vec<u64>]) {
        let mu = self.params.mu;
        let mask = self.params.q_mask();
        let shift = self.params.log_q - self.params.log_p;
        let emit = |column: &[u128], outs: &mut [Vec<u64>]| {
            for (seed, out) in seeds.iter().zip(outs.iter_mut()) {
                let acc = column
                    .iter()
                    .zip(&seed.entries)
                    .fold(0u128, |acc, (&a, &s)| acc.wrapping_add(a.wrapping_mul(s)));
                out.push(((acc & mask) >> shift) as u64);
            }
        };

        let mut col = col_start;
        let end = col_start + count;
        if let Some((cached, CachedColumns::Wide(data))) = &self.cache {
            while col < end.min(*cached) {
                emit(&data[col * mu..(col + 1) * mu], outs);
                col += 1;
            }
        }
        if col == end {
            return;
        }
        let mut reader = self.params.xof();
        reader.set_position((col * mu * 16) as u64);
        let mut raw = vec![0u8; CHUNK_COLS * mu * 16];
        let mut words = vec![0u128; CHUNK_COLS * mu];
        while col < end {
            let cols = CHUNK_COLS.min(end - col);
            let bytes = &mut raw[..cols * mu * 16];
            reader.fill(bytes);
            for (w, b) in words.iter_mut().zip(bytes.chunks_exact(16)) {
                *w = u128::from_le_bytes(b.try_into().unwrap()) & mask;
            }
            for c in 0..cols {
                emit(&words[c * mu..(c + 1) * mu], outs);
            }
            col += cols;
        }
    }
}

/// `G(seed)` without a cache.
pub fn expand(seed: &Seed, out_len: usize, params: &ShprgParams) -> Result<MaskStream> {
    Shprg::new(params.clone())?.expand(seed, out_len)
}

/// Entry-wise sum modulo `q`.
pub fn add_seeds(seeds: &[Seed], params: &ShprgParams) -> Result<Seed> {
    let mask = params.q_mask();
    let mut acc = vec![0u128; params.mu];
    for s in seeds {
        if s.len() != params.mu {
            return Err(Error::LengthMismatch {
                expected: params.mu,
                got: s.len(),
            });
        }
        for (a, &e) in acc.iter_mut().zip(&s.entries) {
            *a = a.wrapping_add(e) & mask;
        }
    }
    Ok(Seed { entries: acc })
}

/// Entry-wise difference modulo `q`.
pub fn sub_seeds(a: &Seed, b: &Seed, params: &ShprgParams) -> Result<Seed> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mask = params.q_mask();
    Ok(Seed {
        entries: a
            .entries
            .iter()
            .zip(&b.entries)
            .map(|(&x, &y)| x.wrapping_sub(y) & mask)
            .collect(),
    })
}

pub fn sample_seed<R: Rng + ?Sized>(params: &ShprgParams, rng: &mut R) -> Seed {
    let mask = params.q_mask();
    Seed {
        entries: (0..params.mu).map(|_| rng.gen::<u128>() & mask).collect(),
    }
}

/// Centered difference `a - b mod p` in `(-p/2, p/2]`.
pub fn centered_diff(a: u64, b: u64, p: u64) -> i64 {
    let d = a.wrapping_sub(b) & (p - 1);
    if d > p / 2 {
        d as i64 - p as i64
    } else {
        d as i64
    }
}
