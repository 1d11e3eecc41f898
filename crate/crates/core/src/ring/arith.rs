//! Word-sized modular arithmetic helpers shared by the ring and BFV layers.

#[inline]
pub fn add_mod(a: u64, b: u64, p: u64) -> u64 {
    let s = a + b;
    if s >= p {
        s - p
    } else {
        s
    }
}

#[inline]
pub fn sub_mod(a: u64, b: u64, p: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + p - b
    }
}

#[inline]
pub fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

pub fn pow_mod(mut base: u64, mut exp: u64, p: u64) -> u64 {
    let mut acc = 1 % p;
    base %= p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, p);
        }
        base = mul_mod(base, base, p);
        exp >>= 1;
    }
    acc
}

/// Inverse of `a` modulo prime `p` (Fermat).
pub fn inv_mod(a: u64, p: u64) -> u64 {
    pow_mod(a, p - 2, p)
}

/// Barrett reduction of products modulo a fixed prime below `2^62`.
#[derive(Debug, Clone, Copy)]
pub struct Barrett {
    p: u64,
    // floor(2^(2k) / p) where k = bit length of p
    m: u64,
    k: u32,
}

impl Barrett {
    pub fn new(p: u64) -> Self {
        assert!(p > 1 && p < 1 << 62);
        let k = 64 - p.leading_zeros();
        let m = ((1u128 << (2 * k)) / p as u128) as u64;
        Self { p, m, k }
    }

    /// `x mod p` for `x < p^2`.
    #[inline]
    pub fn reduce(&self, x: u128) -> u64 {
        let est = (((x >> (self.k - 1)) * self.m as u128) >> (self.k + 1)) as u64;
        let mut r = (x - est as u128 * self.p as u128) as u64;
        while r >= self.p {
            r -= self.p;
        }
        r
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce(a as u128 * b as u128)
    }
}

/// Precomputed `floor(w * 2^64 / p)` for Shoup multiplication by the constant `w`.
#[inline]
pub fn shoup(w: u64, p: u64) -> u64 {
    (((w as u128) << 64) / p as u128) as u64
}

/// `a * w mod p` for a fixed `w` with precomputed `w_shoup`. Requires `p < 2^63`.
#[inline]
pub fn mul_shoup(a: u64, w: u64, w_shoup: u64, p: u64) -> u64 {
    let quot = ((a as u128 * w_shoup as u128) >> 64) as u64;
    let r = a.wrapping_mul(w).wrapping_sub(quot.wrapping_mul(p));
    if r >= p {
        r - p
    } else {
        r
    }
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &b in &BASES {
        if n.is_multiple_of(b) {
            return n == b;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        r += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest-generator primitive `2n`-th root of unity modulo `p`, if one exists.
pub fn primitive_root_2n(p: u64, n: usize) -> Option<u64> {
    let two_n = 2 * n as u64;
    if !(p - 1).is_multiple_of(two_n) {
        return None;
    }
    let exp = (p - 1) / two_n;
    (2..p.min(1 << 20)).find_map(|g| {
        let psi = pow_mod(g, exp, p);
        (pow_mod(psi, n as u64, p) == p - 1).then_some(psi)
    })
}

/// `round_half_up(x * t / q) mod t`, computed exactly on the 256-bit product.
///
/// Requires `x < q < 2^127` and `t <= 2^64`.
pub fn mul_div_round_mod(x: u128, t: u128, q: u128) -> u128 {
    if q < 1 << 112 && t <= 1 << 64 {
        // float estimate within 2^13 of the quotient, then exact correction
        // on the low 128 bits, where the residual is far below 2^127
        let est = ((x as f64) * (t as f64) / (q as f64)).max(0.0) as u128;
        let num = x.wrapping_mul(t).wrapping_add(q >> 1);
        let diff = num.wrapping_sub(est.wrapping_mul(q)) as i128;
        let quot = (est as i128 + diff.div_euclid(q as i128)) as u128;
        return if t.is_power_of_two() { quot & (t - 1) } else { quot % t };
    }
    long_div_round_mod(x, t, q)
}

/// Bit-serial reference for [`mul_div_round_mod`]; any `q < 2^127`.
pub fn long_div_round_mod(x: u128, t: u128, q: u128) -> u128 {
    let (hi, lo) = mul_wide(x, t);
    let (lo, carry) = lo.overflowing_add(q >> 1);
    let hi = hi + carry as u128;

    let mut rem: u128 = 0;
    let mut quot: u128 = 0;
    let total_bits = if hi != 0 {
        256 - hi.leading_zeros()
    } else {
        128 - lo.leading_zeros()
    };
    for bit in (0..total_bits).rev() {
        let b = if bit >= 128 {
            (hi >> (bit - 128)) & 1
        } else {
            (lo >> bit) & 1
        };
        rem = (rem << 1) | b;
        quot <<= 1;
        if rem >= q {
            rem -= q;
            quot |= 1;
        }
    }
    if t.is_power_of_two() {
        quot & (t - 1)
    } else {
        quot % t
    }
}

/// Full 256-bit product of two 128-bit values as `(hi, lo)`.
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (a0, a1) = (a & MASK, a >> 64);
    let (b0, b1) = (b & MASK, b >> 64);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let mid = (p00 >> 64) + (p01 & MASK) + (p10 & MASK);
    let lo = (p00 & MASK) | (mid << 64);
    let hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (hi, lo)
}
