//! Compact multi-key BFV: every party encrypts under one common public key
//! whose secret is the sum of all party secrets, and the aggregate is moved
//! to a designated re-encryption key through a two-step public key switch.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::bfv::{Bfv, Ciphertext, PublicKey, SecretKey};
use crate::error::{Error, Result};
use crate::ring::{sample_gaussian, sample_ternary, sample_uniform, RingElement, RingParams};
use crate::wire::Reader;

pub type PartyId = u32;

/// `(Σ p0_i, a)`; reuses the public key wire format.
pub type CommonPublicKey = PublicKey;

pub fn combine_public_keys(shares: &[PublicKey]) -> Result<CommonPublicKey> {
    let (first, rest) = shares
        .split_first()
        .ok_or_else(|| Error::InvalidParams("no public key shares to combine".into()))?;
    let mut p0 = first.p0().clone();
    for (i, pk) in rest.iter().enumerate() {
        if pk.p1() != first.p1() {
            return Err(Error::ParamsMismatch(format!(
                "public key share {} uses a different reference polynomial",
                i + 1
            )));
        }
        p0.add_assign(pk.p0())?;
    }
    PublicKey::new(p0, first.p1().clone())
}

/// One party's contribution `(s_i*c1 + u_i*p0' + e0_i, u_i*p1' + e1_i)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySwitchShare {
    pub party: PartyId,
    pub h0: RingElement,
    pub h1: RingElement,
}

impl KeySwitchShare {
    pub fn serialized_len(&self) -> usize {
        4 + self.h0.serialized_len() + self.h1.serialized_len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.party.to_le_bytes());
        self.h0.write_to(out);
        self.h1.write_to(out);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.write_to(&mut out);
        out
    }

    pub fn from_bytes(params: &Arc<RingParams>, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let share = Self::read_from(params, &mut r)?;
        r.finish()?;
        Ok(share)
    }

    pub(crate) fn read_from(params: &Arc<RingParams>, r: &mut Reader<'_>) -> Result<Self> {
        let party = r.u32()?;
        let h0 = RingElement::read_from(params, r)?.to_coeff();
        let h1 = RingElement::read_from(params, r)?.to_coeff();
        Ok(Self { party, h0, h1 })
    }
}

/// Partial key-switch share with fresh randomness.
pub fn pks_share<R: Rng + ?Sized>(
    bfv: &Bfv,
    party: PartyId,
    sk_i: &SecretKey,
    ct: &Ciphertext,
    pk_r: &PublicKey,
    rng: &mut R,
) -> Result<KeySwitchShare> {
    let params = bfv.params();
    let u = sample_ternary(params, rng);
    let e0 = sample_gaussian(params, bfv.sampler(), rng);
    let e1 = sample_gaussian(params, bfv.sampler(), rng);
    pks_share_with(party, sk_i, ct, pk_r, &u, &e0, &e1)
}

/// Share computation with caller-chosen `u_i`, `e0_i`, `e1_i`.
pub fn pks_share_with(
    party: PartyId,
    sk_i: &SecretKey,
    ct: &Ciphertext,
    pk_r: &PublicKey,
    u: &RingElement,
    e0: &RingElement,
    e1: &RingElement,
) -> Result<KeySwitchShare> {
    let u_ntt = u.to_ntt();
    let (p0, p1) = pk_r.ntt_parts();
    let s_c1 = ct.c1().to_ntt().mul(sk_i.ntt())?;
    let h0 = s_c1.add(&u_ntt.mul(p0)?)?.to_coeff().add(e0)?;
    let h1 = u_ntt.mul(p1)?.to_coeff().add(e1)?;
    Ok(KeySwitchShare { party, h0, h1 })
}

/// `(c0 + Σ h0_j, Σ h1_j)`; demands exactly one share per party in `parties`.
pub fn pks_merge(
    ct: &Ciphertext,
    shares: &[KeySwitchShare],
    parties: &[PartyId],
) -> Result<Ciphertext> {
    let mut by_party: BTreeMap<PartyId, &KeySwitchShare> = BTreeMap::new();
    for share in shares {
        if !parties.contains(&share.party) {
            return Err(Error::ProtocolViolation {
                message: format!("key-switch share from unregistered party {}", share.party),
                phase: "key switch merge".into(),
            });
        }
        if by_party.insert(share.party, share).is_some() {
            return Err(Error::DuplicateParty(share.party));
        }
    }
    if let Some(&missing) = parties.iter().find(|p| !by_party.contains_key(p)) {
        return Err(Error::MissingParty(missing));
    }
    let mut h0 = RingElement::zero(ct.params());
    let mut h1 = RingElement::zero(ct.params());
    for share in by_party.values() {
        h0.add_assign(&share.h0)?;
        h1.add_assign(&share.h1)?;
    }
    Ciphertext::new(ct.c0().add(&h0)?, h1)
}

/// Re-encryption key pair generated by the leader client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReEncKeyPair {
    pub sk_r: SecretKey,
    pub pk_r: PublicKey,
}

impl ReEncKeyPair {
    pub fn serialized_len(&self) -> usize {
        self.sk_r.serialized_len() + self.pk_r.serialized_len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        self.sk_r.write_to(out);
        self.pk_r.write_to(out);
    }

    pub(crate) fn read_from(params: &Arc<RingParams>, r: &mut Reader<'_>) -> Result<Self> {
        let sk_r = SecretKey::read_from(params, r)?;
        let pk_r = PublicKey::read_from(params, r)?;
        Ok(Self { sk_r, pk_r })
    }
}

/// Fresh key pair. `crs_a` need not be the session CRS; the pair only has
/// to be self-consistent.
pub fn gen_reenc_keypair<R: Rng + ?Sized>(bfv: &Bfv, rng: &mut R) -> Result<ReEncKeyPair> {
    let a = sample_uniform(bfv.params(), rng);
    let (sk_r, pk_r) = bfv.keygen(&a, rng)?;
    Ok(ReEncKeyPair { sk_r, pk_r })
}

/// Encrypts a uniformly random probe under `pk_r` and checks `sk_r` recovers it.
pub fn verify_reenc<R: Rng + ?Sized>(bfv: &Bfv, kp: &ReEncKeyPair, rng: &mut R) -> Result<bool> {
    let t = bfv.params().plaintext_modulus();
    let probe: Vec<u64> = (0..bfv.params().degree())
        .map(|_| (rng.gen::<u128>() % t) as u64)
        .collect();
    let m = bfv.encode(&probe)?;
    let ct = match bfv.encrypt(&kp.pk_r, &m, rng) {
        Ok(ct) => ct,
        Err(Error::ParamsMismatch(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    Ok(bfv.decrypt(&kp.sk_r, &ct)? == m)
}
