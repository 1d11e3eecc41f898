//! Negacyclic polynomial ring `Z_q[X]/(X^n + 1)` in residue-number-system form.
//!
//! `q` is the product of one or two word-sized primes, each `1 mod 2n`, so
//! every residue fits a `u64` and multiplication runs through a per-prime NTT.

pub mod arith;
pub mod ntt;
pub mod sampler;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::wire::Reader;
use arith::{add_mod, inv_mod, mul_shoup, shoup, sub_mod, Barrett};
use ntt::NttTable;

pub use sampler::{
    sample_gaussian, sample_ternary, sample_uniform, GaussianSampler, SamplerConfig,
};

/// First prime of the default modulus (55 bits, `1 mod 8192`).
pub const DEFAULT_PRIME_0: u64 = 36_028_796_999_065_601;
/// Second prime of the default modulus (54 bits, `1 mod 8192`).
///
/// The pair is chosen so that `q = p0 * p1` has 109 bits and `q mod 2^64 = 81921`.
/// A small `q mod t` keeps the `floor(q/t)` scaling error negligible for
/// plaintexts spanning the full 64-bit range.
pub const DEFAULT_PRIME_1: u64 = 14_857_802_316_046_337;
pub const DEFAULT_DEGREE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Coefficient,
    Ntt,
}

impl Domain {
    fn flag(self) -> u8 {
        match self {
            Domain::Coefficient => 0,
            Domain::Ntt => 1,
        }
    }

    fn from_flag(flag: u8) -> Result<Self> {
        match flag {
            0 => Ok(Domain::Coefficient),
            1 => Ok(Domain::Ntt),
            other => Err(Error::Decode(format!("unknown domain flag {other}"))),
        }
    }
}

pub struct RingParams {
    n: usize,
    primes: Vec<u64>,
    q: u128,
    t: u128,
    delta: u128,
    tables: Vec<NttTable>,
    barrett: Vec<Barrett>,
    // p0^{-1} mod p1, for Garner reconstruction
    crt_inv: u64,
    crt_inv_shoup: u64,
    fingerprint: u64,
}

impl fmt::Debug for RingParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RingParams")
            .field("n", &self.n)
            .field("primes", &self.primes)
            .field("log2_q", &self.log2_q())
            .field("t", &self.t)
            .finish()
    }
}

impl RingParams {
    pub fn new(n: usize, primes: &[u64], t: u128) -> Result<Arc<Self>> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidParams(format!(
                "ring degree {n} is not a power of two >= 2"
            )));
        }
        if primes.is_empty() || primes.len() > 2 {
            return Err(Error::InvalidParams(format!(
                "expected one or two primes, got {}",
                primes.len()
            )));
        }
        if primes.len() == 2 && primes[0] == primes[1] {
            return Err(Error::InvalidParams("primes must be distinct".into()));
        }
        let mut tables = Vec::with_capacity(primes.len());
        for &p in primes {
            if p >= 1 << 62 || !arith::is_prime(p) {
                return Err(Error::InvalidParams(format!(
                    "modulus {p} is not a prime below 2^62"
                )));
            }
            if (p - 1) % (2 * n as u64) != 0 {
                return Err(Error::InvalidParams(format!(
                    "prime {p} is not 1 mod 2n = {}",
                    2 * n
                )));
            }
            tables.push(NttTable::new(p, n).ok_or_else(|| {
                Error::InvalidParams(format!("no primitive 2n-th root modulo {p}"))
            })?);
        }
        let q: u128 = primes.iter().map(|&p| p as u128).product();
        if !(2..=1u128 << 64).contains(&t) || t >= q {
            return Err(Error::InvalidParams(format!(
                "plaintext modulus {t} must satisfy 2 <= t <= 2^64 and t < q"
            )));
        }
        let crt_inv = if primes.len() == 2 {
            inv_mod(primes[0] % primes[1], primes[1])
        } else {
            0
        };
        let mut hasher = blake3::Hasher::new();
        hasher.update(b"ring-params");
        hasher.update(&(n as u64).to_le_bytes());
        for p in primes {
            hasher.update(&p.to_le_bytes());
        }
        hasher.update(&t.to_le_bytes());
        let fingerprint = u64::from_le_bytes(hasher.finalize().as_bytes()[..8].try_into().unwrap());
        Ok(Arc::new(Self {
            n,
            primes: primes.to_vec(),
            q,
            t,
            delta: q / t,
            tables,
            barrett: primes.iter().map(|&p| Barrett::new(p)).collect(),
            crt_inv,
            crt_inv_shoup: shoup(crt_inv, primes[primes.len() - 1]),
            fingerprint,
        }))
    }

    /// `n = 4096`, `log2 q = 109`, `t = 2^64`.
    pub fn default_params() -> Arc<Self> {
        Self::new(
            DEFAULT_DEGREE,
            &[DEFAULT_PRIME_0, DEFAULT_PRIME_1],
            1u128 << 64,
        )
        .expect("default ring parameters are valid")
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn modulus(&self) -> u128 {
        self.q
    }

    pub fn log2_q(&self) -> u32 {
        128 - self.q.leading_zeros()
    }

    pub fn plaintext_modulus(&self) -> u128 {
        self.t
    }

    /// `floor(q / t)`.
    pub fn delta(&self) -> u128 {
        self.delta
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub(crate) fn table(&self, idx: usize) -> &NttTable {
        &self.tables[idx]
    }

    /// Serialized size of one ring element.
    pub fn element_bytes(&self) -> usize {
        RingElement::HEADER_BYTES + 8 * self.n * self.primes.len()
    }

    fn check_same(&self, other: &RingParams) -> Result<()> {
        if self.fingerprint != other.fingerprint {
            return Err(Error::ParamsMismatch(format!(
                "ring parameters differ (n={} vs n={}, {} vs {} primes)",
                self.n,
                other.n,
                self.primes.len(),
                other.primes.len()
            )));
        }
        Ok(())
    }

    /// Exact CRT reconstruction of one coefficient into `[0, q)`.
    fn lift_one(&self, residues: &[u64]) -> u128 {
        match residues {
            [r] => *r as u128,
            [r0, r1] => {
                let (p0, p1) = (self.primes[0], self.primes[1]);
                let k = mul_shoup(sub_mod(*r1, r0 % p1, p1), self.crt_inv, self.crt_inv_shoup, p1);
                *r0 as u128 + p0 as u128 * k as u128
            }
            _ => unreachable!("validated prime count"),
        }
    }
}

/// Element of `R_q`, immutable once built; arithmetic returns new values.
#[derive(Clone)]
pub struct RingElement {
    params: Arc<RingParams>,
    residues: Vec<Vec<u64>>,
    domain: Domain,
}

impl fmt::Debug for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<u64> = self.residues[0].iter().take(4).copied().collect();
        f.debug_struct("RingElement")
            .field("n", &self.params.n)
            .field("domain", &self.domain)
            .field("head", &head)
            .finish()
    }
}

impl PartialEq for RingElement {
    fn eq(&self, other: &Self) -> bool {
        self.params.fingerprint == other.params.fingerprint
            && self.domain == other.domain
            && self.residues == other.residues
    }
}

impl Eq for RingElement {}

impl RingElement {
    pub const HEADER_BYTES: usize = 6;

    pub fn zero(params: &Arc<RingParams>) -> Self {
        Self {
            params: params.clone(),
            residues: vec![vec![0; params.n]; params.primes.len()],
            domain: Domain::Coefficient,
        }
    }

    pub fn from_residues(
        params: &Arc<RingParams>,
        residues: Vec<Vec<u64>>,
        domain: Domain,
    ) -> Result<Self> {
        if residues.len() != params.primes.len() {
            return Err(Error::LengthMismatch {
                expected: params.primes.len(),
                got: residues.len(),
            });
        }
        for (row, &p) in residues.iter().zip(&params.primes) {
            if row.len() != params.n {
                return Err(Error::LengthMismatch {
                    expected: params.n,
                    got: row.len(),
                });
            }
            if let Some(bad) = row.iter().find(|&&c| c >= p) {
                return Err(Error::OutOfRange(format!(
                    "residue {bad} not below prime {p}"
                )));
            }
        }
        Ok(Self {
            params: params.clone(),
            residues,
            domain,
        })
    }

    /// Coefficients given as integers (reduced modulo `q`); missing high
    /// coefficients are zero.
    pub fn from_u128(params: &Arc<RingParams>, coeffs: &[u128]) -> Self {
        assert!(coeffs.len() <= params.n, "too many coefficients");
        let residues = params
            .primes
            .iter()
            .map(|&p| {
                let mut row = vec![0u64; params.n];
                for (dst, &c) in row.iter_mut().zip(coeffs) {
                    *dst = match u64::try_from(c) {
                        Ok(c) if c < p => c,
                        Ok(c) => c % p,
                        Err(_) => (c % p as u128) as u64,
                    };
                }
                row
            })
            .collect();
        Self {
            params: params.clone(),
            residues,
            domain: Domain::Coefficient,
        }
    }

    /// Small signed coefficients, e.g. ternary keys or Gaussian errors.
    pub fn from_signed(params: &Arc<RingParams>, coeffs: &[i64]) -> Self {
        assert!(coeffs.len() <= params.n, "too many coefficients");
        let residues = params
            .primes
            .iter()
            .map(|&p| {
                let mut row = vec![0u64; params.n];
                for (dst, &c) in row.iter_mut().zip(coeffs) {
                    let a = c.unsigned_abs();
                    let r = if a < p { a } else { a % p };
                    *dst = if c < 0 && r != 0 { p - r } else { r };
                }
                row
            })
            .collect();
        Self {
            params: params.clone(),
            residues,
            domain: Domain::Coefficient,
        }
    }

    pub fn params(&self) -> &Arc<RingParams> {
        &self.params
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn residues(&self) -> &[Vec<u64>] {
        &self.residues
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        self.params.check_same(&other.params)?;
        if self.domain != other.domain {
            return Err(Error::ParamsMismatch(format!(
                "domain {:?} vs {:?}",
                self.domain, other.domain
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u64, u64, u64) -> u64) -> Result<Self> {
        self.check_compatible(other)?;
        let residues = self
            .residues
            .iter()
            .zip(&other.residues)
            .zip(&self.params.primes)
            .map(|((a, b), &p)| a.iter().zip(b).map(|(&x, &y)| f(x, y, p)).collect())
            .collect();
        Ok(Self {
            params: self.params.clone(),
            residues,
            domain: self.domain,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, add_mod)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, sub_mod)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for ((a, b), &p) in self
            .residues
            .iter_mut()
            .zip(&other.residues)
            .zip(&self.params.primes)
        {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = add_mod(*x, y, p);
            }
        }
        Ok(())
    }

    pub fn neg(&self) -> Self {
        let residues = self
            .residues
            .iter()
            .zip(&self.params.primes)
            .map(|(a, &p)| a.iter().map(|&x| sub_mod(0, x, p)).collect())
            .collect();
        Self {
            params: self.params.clone(),
            residues,
            domain: self.domain,
        }
    }

    /// Multiplication by an integer constant (reduced modulo each prime).
    pub fn scalar_mul(&self, c: u128) -> Self {
        let residues = self
            .residues
            .iter()
            .zip(&self.params.primes)
            .map(|(a, &p)| {
                let cp = (c % p as u128) as u64;
                let cs = shoup(cp, p);
                a.iter().map(|&x| mul_shoup(x, cp, cs, p)).collect()
            })
            .collect();
        Self {
            params: self.params.clone(),
            residues,
            domain: self.domain,
        }
    }

    pub fn to_ntt(&self) -> Self {
        if self.domain == Domain::Ntt {
            return self.clone();
        }
        let mut out = self.clone();
        for (i, row) in out.residues.iter_mut().enumerate() {
            self.params.table(i).forward(row);
        }
        out.domain = Domain::Ntt;
        out
    }

    pub fn to_coeff(&self) -> Self {
        if self.domain == Domain::Coefficient {
            return self.clone();
        }
        let mut out = self.clone();
        for (i, row) in out.residues.iter_mut().enumerate() {
            self.params.table(i).inverse(row);
        }
        out.domain = Domain::Coefficient;
        out
    }

    /// Product modulo `X^n + 1`. The result is in NTT form only when both
    /// operands already are.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.params.check_same(&other.params)?;
        let a = self.to_ntt();
        let b = other.to_ntt();
        a.check_compatible(&b)?;
        let residues = a
            .residues
            .iter()
            .zip(&b.residues)
            .zip(&self.params.barrett)
            .map(|((x, y), br)| x.iter().zip(y).map(|(&u, &v)| br.mul(u, v)).collect())
            .collect();
        let mut prod = Self {
            params: self.params.clone(),
            residues,
            domain: Domain::Ntt,
        };
        if self.domain == Domain::Coefficient || other.domain == Domain::Coefficient {
            prod = prod.to_coeff();
        }
        Ok(prod)
    }

    /// Coefficients reconstructed into `[0, q)`.
    pub fn crt_lift(&self) -> Vec<u128> {
        let coeff = self.to_coeff();
        let k = coeff.residues.len();
        let mut buf = vec![0u64; k];
        (0..self.params.n)
            .map(|j| {
                for (slot, row) in buf.iter_mut().zip(&coeff.residues) {
                    *slot = row[j];
                }
                self.params.lift_one(&buf)
            })
            .collect()
    }

    /// Coefficients in the centered range `(-q/2, q/2]`.
    pub fn centered_lift(&self) -> Vec<i128> {
        let q = self.params.q;
        self.crt_lift()
            .into_iter()
            .map(|c| if c > q / 2 { c as i128 - q as i128 } else { c as i128 })
            .collect()
    }

    /// Infinity norm of the centered representative.
    pub fn inf_norm(&self) -> u128 {
        self.centered_lift()
            .into_iter()
            .map(|c| c.unsigned_abs())
            .max()
            .unwrap_or(0)
    }

    pub fn serialized_len(&self) -> usize {
        self.params.element_bytes()
    }

    /// Header (`n`: u32, prime count: u8, domain flag: u8), then every
    /// residue row as little-endian `u64` words.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.reserve(self.serialized_len());
        out.extend_from_slice(&(self.params.n as u32).to_le_bytes());
        out.push(self.residues.len() as u8);
        out.push(self.domain.flag());
        for row in &self.residues {
            for &c in row {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out);
        out
    }

    pub fn from_bytes(params: &Arc<RingParams>, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let e = Self::read_from(params, &mut r)?;
        r.finish()?;
        Ok(e)
    }

    pub(crate) fn read_from(params: &Arc<RingParams>, r: &mut Reader<'_>) -> Result<Self> {
        let n = r.u32()? as usize;
        let k = r.u8()? as usize;
        let domain = Domain::from_flag(r.u8()?)?;
        if n != params.n || k != params.primes.len() {
            return Err(Error::ParamsMismatch(format!(
                "encoded element has n={n}, {k} primes; expected n={}, {} primes",
                params.n,
                params.primes.len()
            )));
        }
        let mut residues = Vec::with_capacity(k);
        for _ in 0..k {
            let raw = r.take(8 * n)?;
            residues.push(
                raw.chunks_exact(8)
                    .map(|w| u64::from_le_bytes(w.try_into().unwrap()))
                    .collect(),
            );
        }
        Self::from_residues(params, residues, domain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Arc<RingParams> {
        RingParams::new(4, &[17], 4).unwrap()
    }

    #[test]
    fn default_modulus_shape() {
        let p = RingParams::default_params();
        assert_eq!(p.log2_q(), 109);
        assert_eq!(p.modulus() % (1u128 << 64), 81921);
        assert!(p.delta() * p.plaintext_modulus() <= p.modulus());
        assert!(p.modulus() < (p.delta() + 1) * p.plaintext_modulus());
        for &prime in p.primes() {
            assert!(prime < 1 << 56);
            assert_eq!((prime - 1) % 8192, 0);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(RingParams::new(6, &[17], 4).is_err());
        assert!(RingParams::new(4, &[19], 4).is_err());
        assert!(RingParams::new(4, &[15], 4).is_err());
        assert!(RingParams::new(4, &[17, 17], 4).is_err());
        assert!(RingParams::new(4, &[17], 17).is_err());
    }

    #[test]
    fn additive_inverse() {
        let p = small();
        let a = RingElement::from_u128(&p, &[1, 2, 3, 4]);
        let b = RingElement::from_u128(&p, &[16, 15, 14, 13]);
        assert_eq!(a.add(&b).unwrap(), RingElement::zero(&p));
        assert_eq!(a.add(&RingElement::zero(&p)).unwrap(), a);
    }

    #[test]
    fn wraparound_sign_flip() {
        let p = small();
        let x = RingElement::from_u128(&p, &[0, 1]);
        let x3 = RingElement::from_u128(&p, &[0, 0, 0, 1]);
        let prod = x.mul(&x3).unwrap();
        assert_eq!(prod.crt_lift(), vec![16, 0, 0, 0]);
    }

    #[test]
    fn multiplicative_identity() {
        let p = RingParams::new(8, &[17, 97], 4).unwrap();
        let a = RingElement::from_u128(&p, &[5, 1000, 3, 1648, 0, 7, 77, 1]);
        let one = RingElement::from_u128(&p, &[1]);
        assert_eq!(a.mul(&one).unwrap(), a);
    }

    #[test]
    fn crt_lift_examples() {
        let p = RingParams::new(8, &[17, 97], 4).unwrap();
        let mut res = vec![vec![0u64; 8], vec![0u64; 8]];
        assert!(RingElement::from_residues(&p, res.clone(), Domain::Coefficient)
            .unwrap()
            .crt_lift()
            .iter()
            .all(|&c| c == 0));
        res[0][0] = 4;
        res[1][0] = 4;
        res[0][1] = 0;
        res[1][1] = 17;
        let lifted = RingElement::from_residues(&p, res, Domain::Coefficient)
            .unwrap()
            .crt_lift();
        assert_eq!(lifted[0], 4);
        let searched = (0u128..1649).find(|x| x % 17 == 0 && x % 97 == 17).unwrap();
        assert_eq!(searched, 17);
        assert_eq!(lifted[1], searched);
    }

    #[test]
    fn mismatch_is_rejected() {
        let a = RingElement::zero(&small());
        let b = RingElement::zero(&RingParams::new(8, &[17], 4).unwrap());
        assert!(matches!(a.add(&b), Err(Error::ParamsMismatch(_))));
        assert!(a.mul(&b).is_err());
        let an = a.to_ntt();
        assert!(a.add(&an).is_err());
    }

    #[test]
    fn serialization_layout() {
        let p = small();
        let a = RingElement::from_u128(&p, &[1, 2, 3, 16]);
        let bytes = a.to_bytes();
        assert_eq!(bytes.len(), 6 + 4 * 8);
        assert_eq!(&bytes[..6], &[4, 0, 0, 0, 1, 0]);
        assert_eq!(&bytes[6..14], &1u64.to_le_bytes());
        assert_eq!(RingElement::from_bytes(&p, &bytes).unwrap(), a);
        assert!(RingElement::from_bytes(&p, &bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[6] = 17;
        assert!(RingElement::from_bytes(&p, &bad).is_err());
    }
}
