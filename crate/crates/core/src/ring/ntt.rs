//! Negacyclic number-theoretic transform over a single NTT-friendly prime.
//!
//! Forward is Cooley-Tukey with bit-reversed powers of a primitive `2n`-th
//! root `psi`, inverse is Gentleman-Sande; the pair maps coefficient vectors
//! to evaluations at the odd powers of `psi`, so pointwise products
//! correspond to multiplication modulo `X^n + 1`.

use super::arith::{inv_mod, mul_shoup, pow_mod, primitive_root_2n, shoup};

#[derive(Debug, Clone)]
pub struct NttTable {
    prime: u64,
    n: usize,
    psi_rev: Vec<u64>,
    psi_rev_shoup: Vec<u64>,
    psi_inv_rev: Vec<u64>,
    psi_inv_rev_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

fn bit_reverse(mut x: usize, bits: u32) -> usize {
    let mut r = 0;
    for _ in 0..bits {
        r = (r << 1) | (x & 1);
        x >>= 1;
    }
    r
}

impl NttTable {
    pub fn new(prime: u64, n: usize) -> Option<Self> {
        let psi = primitive_root_2n(prime, n)?;
        let psi_inv = inv_mod(psi, prime);
        let bits = n.trailing_zeros();
        let mut psi_rev = vec![0u64; n];
        let mut psi_inv_rev = vec![0u64; n];
        let mut pw = 1u64;
        let mut pw_inv = 1u64;
        for i in 0..n {
            let r = bit_reverse(i, bits);
            psi_rev[r] = pw;
            psi_inv_rev[r] = pw_inv;
            pw = super::arith::mul_mod(pw, psi, prime);
            pw_inv = super::arith::mul_mod(pw_inv, psi_inv, prime);
        }
        let n_inv = pow_mod(n as u64, prime - 2, prime);
        Some(Self {
            prime,
            n,
            psi_rev_shoup: psi_rev.iter().map(|&w| shoup(w, prime)).collect(),
            psi_inv_rev_shoup: psi_inv_rev.iter().map(|&w| shoup(w, prime)).collect(),
            psi_rev,
            psi_inv_rev,
            n_inv,
            n_inv_shoup: shoup(n_inv, prime),
        })
    }

    /// In place; input and output coefficients in `[0, p)`.
    pub fn forward(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.n);
        let p = self.prime;
        let two_p = 2 * p;
        // lazy butterflies keep values in [0, 4p); p < 2^62 makes that safe
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t >>= 1;
            for (i, block) in a.chunks_exact_mut(2 * t).enumerate() {
                let w = self.psi_rev[m + i];
                let ws = self.psi_rev_shoup[m + i];
                let (lo, hi) = block.split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let mut u = *x;
                    if u >= two_p {
                        u -= two_p;
                    }
                    let v = mul_shoup_lazy(*y, w, ws, p);
                    *x = u + v;
                    *y = u + two_p - v;
                }
            }
            m <<= 1;
        }
        for x in a.iter_mut() {
            let mut v = *x;
            if v >= two_p {
                v -= two_p;
            }
            if v >= p {
                v -= p;
            }
            *x = v;
        }
    }

    /// In place; input and output coefficients in `[0, p)`.
    pub fn inverse(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.n);
        let p = self.prime;
        let two_p = 2 * p;
        // values stay in [0, 2p)
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m >> 1;
            for (i, block) in a.chunks_exact_mut(2 * t).enumerate() {
                let w = self.psi_inv_rev[h + i];
                let ws = self.psi_inv_rev_shoup[h + i];
                let (lo, hi) = block.split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let (u, v) = (*x, *y);
                    let mut s = u + v;
                    if s >= two_p {
                        s -= two_p;
                    }
                    *x = s;
                    *y = mul_shoup_lazy(u + two_p - v, w, ws, p);
                }
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = mul_shoup(*x, self.n_inv, self.n_inv_shoup, p);
        }
    }
}

/// `a * w mod p` up to one extra `p`: result in `[0, 2p)` for any `a`.
#[inline(always)]
fn mul_shoup_lazy(a: u64, w: u64, w_shoup: u64, p: u64) -> u64 {
    let quot = ((a as u128 * w_shoup as u128) >> 64) as u64;
    a.wrapping_mul(w).wrapping_sub(quot.wrapping_mul(p))
}
