//! Addition-only BFV over [`RingParams`]: key generation against a shared
//! reference polynomial, encryption, scale-and-round decryption, and
//! coefficient packing of plaintext values.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ring::{
    arith, sample_gaussian, sample_ternary, GaussianSampler, RingElement, RingParams,
    SamplerConfig,
};
use crate::wire::Reader;

const TAG_CIPHERTEXT: u8 = 0x43;
const TAG_PUBLIC_KEY: u8 = 0x50;
const TAG_SECRET_KEY: u8 = 0x53;

fn expect_tag(r: &mut Reader<'_>, tag: u8, what: &str) -> Result<()> {
    let got = r.u8()?;
    if got != tag {
        return Err(Error::Decode(format!(
            "expected {what} tag {tag:#04x}, got {got:#04x}"
        )));
    }
    Ok(())
}

/// Ternary secret `s`, kept alongside its NTT form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecretKey {
    s: RingElement,
    s_ntt: RingElement,
}

impl SecretKey {
    pub fn from_element(s: RingElement) -> Self {
        let s = s.to_coeff();
        let s_ntt = s.to_ntt();
        Self { s, s_ntt }
    }

    pub fn element(&self) -> &RingElement {
        &self.s
    }

    pub(crate) fn ntt(&self) -> &RingElement {
        &self.s_ntt
    }

    /// Secret key of the sum of secrets, e.g. the joint key of a multi-key setup.
    pub fn sum<'a>(keys: impl IntoIterator<Item = &'a SecretKey>) -> Result<SecretKey> {
        let mut it = keys.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::InvalidParams("empty key set".into()))?;
        let mut acc = first.s.clone();
        for k in it {
            acc.add_assign(&k.s)?;
        }
        Ok(Self::from_element(acc))
    }

    pub fn serialized_len(&self) -> usize {
        1 + self.s.serialized_len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push(TAG_SECRET_KEY);
        self.s.write_to(out);
    }

    pub(crate) fn read_from(params: &Arc<RingParams>, r: &mut Reader<'_>) -> Result<Self> {
        expect_tag(r, TAG_SECRET_KEY, "secret key")?;
        Ok(Self::from_element(RingElement::read_from(params, r)?))
    }
}

/// `(p0, p1) = (-s*a + e, a)`.
#[derive(Clone, Debug)]
pub struct PublicKey {
    p0: RingElement,
    p1: RingElement,
    p0_ntt: RingElement,
    p1_ntt: RingElement,
}

impl PartialEq for PublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.p0 == other.p0 && self.p1 == other.p1
    }
}

impl Eq for PublicKey {}

impl PublicKey {
    pub fn new(p0: RingElement, p1: RingElement) -> Result<Self> {
        let p0 = p0.to_coeff();
        let p1 = p1.to_coeff();
        // shape check
        p0.add(&p1)?;
        Ok(Self {
            p0_ntt: p0.to_ntt(),
            p1_ntt: p1.to_ntt(),
            p0,
            p1,
        })
    }

    pub fn p0(&self) -> &RingElement {
        &self.p0
    }

    pub fn p1(&self) -> &RingElement {
        &self.p1
    }

    pub(crate) fn ntt_parts(&self) -> (&RingElement, &RingElement) {
        (&self.p0_ntt, &self.p1_ntt)
    }

    pub fn params(&self) -> &Arc<RingParams> {
        self.p0.params()
    }

    pub fn serialized_len(&self) -> usize {
        1 + self.p0.serialized_len() + self.p1.serialized_len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push(TAG_PUBLIC_KEY);
        self.p0.write_to(out);
        self.p1.write_to(out);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.write_to(&mut out);
        out
    }

    pub fn from_bytes(params: &Arc<RingParams>, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let pk = Self::read_from(params, &mut r)?;
        r.finish()?;
        Ok(pk)
    }

    pub(crate) fn read_from(params: &Arc<RingParams>, r: &mut Reader<'_>) -> Result<Self> {
        expect_tag(r, TAG_PUBLIC_KEY, "public key")?;
        let p0 = RingElement::read_from(params, r)?;
        let p1 = RingElement::read_from(params, r)?;
        Self::new(p0, p1)
    }
}

/// `n` plaintext coefficients in `[0, t)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plaintext {
    coeffs: Vec<u64>,
}

impl Plaintext {
    pub fn new(params: &RingParams, coeffs: Vec<u64>) -> Result<Self> {
        if coeffs.len() != params.degree() {
            return Err(Error::LengthMismatch {
                expected: params.degree(),
                got: coeffs.len(),
            });
        }
        let t = params.plaintext_modulus();
        if let Some((i, &c)) = coeffs.iter().enumerate().find(|(_, &c)| c as u128 >= t) {
            return Err(Error::OutOfRange(format!(
                "plaintext coefficient {i} = {c} is not below t = {t}"
            )));
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    c0: RingElement,
    c1: RingElement,
}

impl Ciphertext {
    pub fn new(c0: RingElement, c1: RingElement) -> Result<Self> {
        let c0 = c0.to_coeff();
        let c1 = c1.to_coeff();
        c0.add(&c1)?;
        Ok(Self { c0, c1 })
    }

    pub fn c0(&self) -> &RingElement {
        &self.c0
    }

    pub fn c1(&self) -> &RingElement {
        &self.c1
    }

    pub fn params(&self) -> &Arc<RingParams> {
        self.c0.params()
    }

    /// Homomorphic addition.
    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            c0: self.c0.add(&other.c0)?,
            c1: self.c1.add(&other.c1)?,
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.c0.add_assign(&other.c0)?;
        self.c1.add_assign(&other.c1)
    }

    pub fn serialized_len(&self) -> usize {
        1 + self.c0.serialized_len() + self.c1.serialized_len()
    }

    /// Type tag, then `c0` and `c1` in ring serialization.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push(TAG_CIPHERTEXT);
        self.c0.write_to(out);
        self.c1.write_to(out);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.write_to(&mut out);
        out
    }

    pub fn from_bytes(params: &Arc<RingParams>, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let ct = Self::read_from(params, &mut r)?;
        r.finish()?;
        Ok(ct)
    }

    pub(crate) fn read_from(params: &Arc<RingParams>, r: &mut Reader<'_>) -> Result<Self> {
        expect_tag(r, TAG_CIPHERTEXT, "ciphertext")?;
        let c0 = RingElement::read_from(params, r)?;
        let c1 = RingElement::read_from(params, r)?;
        Self::new(c0, c1)
    }
}

/// Scheme context: ring parameters plus the error sampler.
#[derive(Clone, Debug)]
pub struct Bfv {
    params: Arc<RingParams>,
    sampler: GaussianSampler,
}

impl Bfv {
    pub fn new(params: Arc<RingParams>, sampler: SamplerConfig) -> Result<Self> {
        Ok(Self {
            params,
            sampler: GaussianSampler::new(sampler)?,
        })
    }

    pub fn default_params() -> Self {
        Self::new(RingParams::default_params(), SamplerConfig::default())
            .expect("default BFV parameters are valid")
    }

    pub fn params(&self) -> &Arc<RingParams> {
        &self.params
    }

    pub fn sampler(&self) -> &GaussianSampler {
        &self.sampler
    }

    pub fn keygen<R: Rng + ?Sized>(
        &self,
        crs_a: &RingElement,
        rng: &mut R,
    ) -> Result<(SecretKey, PublicKey)> {
        let s = sample_ternary(&self.params, rng);
        let e = sample_gaussian(&self.params, &self.sampler, rng);
        let sk = SecretKey::from_element(s);
        let pk = self.public_key_for(&sk, crs_a, &e)?;
        Ok((sk, pk))
    }

    /// `(-s*a + e, a)` for a given secret and error.
    pub fn public_key_for(
        &self,
        sk: &SecretKey,
        crs_a: &RingElement,
        e: &RingElement,
    ) -> Result<PublicKey> {
        let sa = sk.ntt().mul(&crs_a.to_ntt())?.to_coeff();
        let p0 = e.sub(&sa)?;
        PublicKey::new(p0, crs_a.clone())
    }

    /// `(Δm + u*p0 + e0, u*p1 + e1)` with fresh ternary `u` and Gaussian errors.
    pub fn encrypt<R: Rng + ?Sized>(
        &self,
        pk: &PublicKey,
        m: &Plaintext,
        rng: &mut R,
    ) -> Result<Ciphertext> {
        let u = sample_ternary(&self.params, rng);
        let e0 = sample_gaussian(&self.params, &self.sampler, rng);
        let e1 = sample_gaussian(&self.params, &self.sampler, rng);
        self.encrypt_with(pk, m, &u, &e0, &e1)
    }

    /// Encryption with caller-chosen randomness.
    pub fn encrypt_with(
        &self,
        pk: &PublicKey,
        m: &Plaintext,
        u: &RingElement,
        e0: &RingElement,
        e1: &RingElement,
    ) -> Result<Ciphertext> {
        let params = pk.params();
        if params.fingerprint() != self.params.fingerprint() {
            return Err(Error::ParamsMismatch("public key ring".into()));
        }
        let m = Plaintext::new(params, m.coeffs.clone())?;
        let u_ntt = u.to_ntt();
        let c0 = u_ntt
            .mul(&pk.p0_ntt)?
            .to_coeff()
            .add(e0)?
            .add(&self.scaled_message(&m))?;
        let c1 = u_ntt.mul(&pk.p1_ntt)?.to_coeff().add(e1)?;
        Ciphertext::new(c0, c1)
    }

    /// `Δ * m` as a ring element.
    pub fn scaled_message(&self, m: &Plaintext) -> RingElement {
        let wide: Vec<u128> = m.coeffs.iter().map(|&c| c as u128).collect();
        RingElement::from_u128(&self.params, &wide).scalar_mul(self.params.delta())
    }

    /// `[c0 + c1*s]_q`, the phase carrying `Δm + noise`.
    pub fn phase(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<RingElement> {
        let c1s = ct.c1.to_ntt().mul(sk.ntt())?.to_coeff();
        ct.c0.add(&c1s)
    }

    /// `round(t/q * [c0 + c1*s]_q) mod t`, rounding half up.
    pub fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Plaintext> {
        let phase = self.phase(sk, ct)?;
        let q = self.params.modulus();
        let t = self.params.plaintext_modulus();
        let coeffs = phase
            .crt_lift()
            .into_iter()
            .map(|x| arith::mul_div_round_mod(x, t, q) as u64)
            .collect();
        Ok(Plaintext { coeffs })
    }

    /// Infinity norm of `[c0 + c1*s - Δm]_q` (centered). Needs the secret
    /// key; intended for diagnostics and tests.
    pub fn noise_norm(&self, sk: &SecretKey, ct: &Ciphertext, m: &Plaintext) -> Result<u128> {
        let phase = self.phase(sk, ct)?;
        Ok(phase.sub(&self.scaled_message(m))?.inf_norm())
    }

    /// `Δ/2`, the noise magnitude beyond which decryption rounds wrongly.
    pub fn noise_budget(&self) -> u128 {
        self.params.delta() / 2
    }

    /// Coefficient packing: `values` go to coefficients `0..len`, zero above.
    pub fn encode(&self, values: &[u64]) -> Result<Plaintext> {
        let n = self.params.degree();
        if values.len() > n {
            return Err(Error::OutOfRange(format!(
                "{} values exceed ring degree {n}",
                values.len()
            )));
        }
        let mut coeffs = values.to_vec();
        coeffs.resize(n, 0);
        Plaintext::new(&self.params, coeffs)
    }
}

/// Inverse of [`Bfv::encode`].
pub fn decode(pt: &Plaintext, count: usize) -> Result<Vec<u64>> {
    if count > pt.coeffs.len() {
        return Err(Error::OutOfRange(format!(
            "cannot decode {count} values from {} coefficients",
            pt.coeffs.len()
        )));
    }
    Ok(pt.coeffs[..count].to_vec())
}

/// Number of plaintexts needed to pack `values` entries at degree `n`.
pub fn plaintext_count(values: usize, n: usize) -> usize {
    values.div_ceil(n)
}
