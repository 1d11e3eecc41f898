use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::transcript::Transcript;
use crate::error::{Error, Result};
use crate::protocol::{ClientView, Message, MessageKind, PartyRef, Payload, SessionContext};
use crate::shprg::{add_seeds, sub_seeds, Seed};

pub const SIGNIFICANCE: f64 = 1e-3;
const BUCKET_BITS: u32 = 6;

/// Parties pooling their views, e.g. `server,3,5`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Colluders {
    pub server: bool,
    pub clients: BTreeSet<u32>,
}

impl Colluders {
    pub fn is_empty(&self) -> bool {
        !self.server && self.clients.is_empty()
    }

    pub fn contains(&self, p: PartyRef) -> bool {
        match p {
            PartyRef::Server => self.server,
            PartyRef::Client(id) => self.clients.contains(&id),
        }
    }
}

impl FromStr for Colluders {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut c = Colluders::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.eq_ignore_ascii_case("server") {
                c.server = true;
            } else if part.eq_ignore_ascii_case("none") {
            } else {
                let id = part
                    .parse()
                    .map_err(|_| Error::InvalidParams(format!("bad colluder '{part}'")))?;
                c.clients.insert(id);
            }
        }
        Ok(c)
    }
}

impl fmt::Display for Colluders {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        if self.server {
            parts.push("server".into());
        }
        parts.extend(self.clients.iter().map(u32::to_string));
        f.write_str(&parts.join(","))
    }
}

/// What the coalition computes about the honest clients for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub epoch: u32,
    pub honest: Vec<u32>,
    /// `k0 - sum of colluders' seeds`: the honest clients' seed sum.
    pub honest_seed_sum: Vec<u128>,
    /// Sum of honest quantized updates, up to the PRG's rounding noise.
    pub honest_update_sum: Vec<i64>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityTest {
    pub party: u32,
    pub kind: MessageKind,
    pub epoch: u32,
    pub samples: usize,
    pub buckets: usize,
    pub chi_square: f64,
    pub p_value: f64,
    pub attempts: u32,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuralReport {
    /// Message kinds the server ever received.
    pub server_inbound: Vec<MessageKind>,
    /// Kinds honest clients sent to a colluder, with counts.
    pub honest_to_coalition: BTreeMap<String, u64>,
    /// Secret-bearing messages that reached the server.
    pub secrets_at_server: u64,
    /// Share of entries landing in `[0, 2^w)` when one honest upload is
    /// unmasked with the honest seed sum; about `2^w / p` when nothing
    /// individual leaks.
    pub single_unmask_in_range: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub colluders: String,
    pub honest: Vec<u32>,
    pub reconstructions: Vec<Reconstruction>,
    pub uniformity: Vec<UniformityTest>,
    pub structural: StructuralReport,
}

impl AuditReport {
    pub fn uniformity_passed(&self) -> bool {
        self.uniformity.iter().all(|u| u.passed)
    }
}

fn chi_square(values: impl Iterator<Item = usize>, buckets: usize) -> (usize, f64, f64) {
    let mut counts = vec![0u64; buckets];
    let mut n = 0;
    for b in values {
        counts[b] += 1;
        n += 1;
    }
    let expected = n as f64 / buckets as f64;
    let stat = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum::<f64>();
    let dist = ChiSquared::new((buckets - 1) as f64).expect("positive dof");
    (n, stat, 1.0 - dist.cdf(stat))
}

/// Chi-square test over `2^6` equal buckets of the top bits. The first
/// attempt uses the first half of the samples, a retry the second half.
fn uniformity(party: u32, kind: MessageKind, epoch: u32, values: &[u64], bits: u32) -> UniformityTest {
    let buckets = 1usize << BUCKET_BITS;
    let shift = bits - BUCKET_BITS;
    let half = values.len() / 2;
    let mut attempts = 0;
    let mut last = (0, 0.0, 0.0);
    for part in [&values[..half], &values[half..]] {
        attempts += 1;
        last = chi_square(part.iter().map(|&v| (v >> shift) as usize), buckets);
        if last.2 >= SIGNIFICANCE {
            break;
        }
    }
    UniformityTest {
        party,
        kind,
        epoch,
        samples: last.0,
        buckets,
        chi_square: last.1,
        p_value: last.2,
        attempts,
        passed: last.2 >= SIGNIFICANCE,
    }
}

/// Residues modulo the first prime, scaled into `[0, 2^bits)`.
fn scaled_residues(residues: &[u64], prime: u64, bits: u32) -> Vec<u64> {
    residues
        .iter()
        .map(|&r| ((r as u128) << bits).div_euclid(prime as u128) as u64)
        .collect()
}

/// What a coalition of the server and/or some clients can compute from
/// their pooled transcript entries and private client state.
///
/// `transcript` must have been captured in full; only entries received by
/// colluders and views of colluding clients are used.
pub fn audit_colluding_view(
    ctx: &SessionContext,
    transcript: &Transcript,
    views: &[ClientView],
    colluders: &Colluders,
) -> Result<AuditReport> {
    let n = ctx.n_clients();
    if colluders.clients.len() > n.saturating_sub(2) {
        return Err(Error::InvalidParams(format!(
            "colluder set too large: {} of {n} clients, at most {}",
            colluders.clients.len(),
            n.saturating_sub(2)
        )));
    }
    if let Some(&bad) = colluders.clients.iter().find(|&&c| c as usize >= n) {
        return Err(Error::InvalidParams(format!("colluder {bad} is not a client")));
    }
    let honest: Vec<u32> = ctx
        .client_ids()
        .into_iter()
        .filter(|id| !colluders.clients.contains(id))
        .collect();
    let views: BTreeMap<u32, &ClientView> = views
        .iter()
        .filter(|v| colluders.clients.contains(&v.id))
        .map(|v| (v.id, v))
        .collect();
    if let Some(&missing) = colluders.clients.iter().find(|c| !views.contains_key(c)) {
        return Err(Error::InvalidParams(format!("no recorded view for colluder {missing}")));
    }

    let params = ctx.shprg_params();
    let p = ctx.quant.p();
    let log_p = params.log_p;
    let w_range = 1u64 << ctx.config.w;
    let mut uploads: BTreeMap<u32, BTreeMap<u32, Vec<u64>>> = BTreeMap::new();
    let mut broadcasts: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    let mut uniform = Vec::new();
    let mut server_inbound = BTreeSet::new();
    let mut honest_to_coalition: BTreeMap<String, u64> = BTreeMap::new();
    let mut secrets_at_server = 0;
    let mut seen_ct_party = BTreeSet::new();

    for e in transcript.entries() {
        if e.receiver == PartyRef::Server {
            server_inbound.insert(e.kind);
            if e.kind == MessageKind::ReEncKeyDeliver {
                secrets_at_server += 1;
            }
        }
        if !colluders.contains(e.receiver) {
            continue;
        }
        let honest_sender = matches!(e.sender, PartyRef::Client(id) if !colluders.clients.contains(&id));
        if honest_sender {
            *honest_to_coalition.entry(e.kind.to_string()).or_default() += 1;
        }
        let wanted = matches!(
            e.kind,
            MessageKind::MaskedUpload | MessageKind::MaskedAggBroadcast | MessageKind::SeedCiphertexts
        );
        if !wanted {
            continue;
        }
        let bytes = e
            .bytes
            .as_ref()
            .ok_or_else(|| Error::InvalidParams("audit needs a fully captured transcript".into()))?;
        let msg = Message::decode(bytes, ctx)?;
        match (msg.payload, msg.sender) {
            (Payload::MaskedUpload(y), PartyRef::Client(id)) if honest_sender => {
                uniform.push(uniformity(id, e.kind, e.epoch, &y.values, log_p));
                uploads.entry(e.epoch).or_default().insert(id, y.values);
            }
            (Payload::MaskedAggBroadcast(y), _) => {
                broadcasts.insert(e.epoch, y.values);
            }
            (Payload::SeedCiphertexts(cts), PartyRef::Client(id))
                if honest_sender && seen_ct_party.insert((id, e.run)) =>
            {
                if let Some(ct) = cts.first() {
                    let prime = ct.params().primes()[0];
                    let vals = scaled_residues(&ct.c0().residues()[0], prime, 16);
                    let mut test = uniformity(id, e.kind, e.run, &vals, 16);
                    test.epoch = 0;
                    uniform.push(test);
                }
            }
            _ => {}
        }
    }

    let mut reconstructions = Vec::new();
    let mut in_range = (0u64, 0u64);
    if let Some(first) = views.values().next() {
        for (&epoch, entry) in &first.epochs {
            let mut own = Vec::new();
            let mut xs = vec![0i64; ctx.config.model_size];
            for v in views.values() {
                let Some(ve) = v.epochs.get(&epoch) else { continue };
                own.push(ve.seed.clone());
                for (a, &x) in xs.iter_mut().zip(&ve.quantized.values) {
                    *a += x as i64;
                }
            }
            if own.len() != views.len() {
                continue;
            }
            let honest_seed: Seed = sub_seeds(&entry.demask, &add_seeds(&own, params)?, params)?;
            let h = honest.len() as u64;
            let lift = |d: u64| if d > p - h.max(1) { d as i64 - p as i64 } else { d as i64 };
            let epoch_uploads = uploads.get(&epoch).filter(|u| colluders.server && u.len() == honest.len());
            let (sum, source) = if let Some(ups) = epoch_uploads {
                let g = ctx.shprg.expand(&honest_seed, ctx.config.model_size)?;
                let mut acc: Vec<u64> = g.values.iter().map(|&v| p - v).collect();
                for y in ups.values() {
                    for (a, &v) in acc.iter_mut().zip(y) {
                        *a = (*a + v) & (p - 1);
                    }
                }
                if let Some(y) = ups.values().next() {
                    for (&v, &gv) in y.iter().zip(&g.values) {
                        in_range.0 += (v.wrapping_sub(gv) & (p - 1) < w_range) as u64;
                        in_range.1 += 1;
                    }
                }
                (acc.into_iter().map(lift).collect(), "honest masked uploads")
            } else if let Some(y0) = broadcasts.get(&epoch) {
                let g0 = ctx.shprg.expand(&entry.demask, ctx.config.model_size)?;
                let agg = y0
                    .iter()
                    .zip(&g0.values)
                    .zip(&xs)
                    .map(|((&y, &g), &x)| {
                        let d = y.wrapping_sub(g).wrapping_sub(x as u64) & (p - 1);
                        if d > p - n as u64 { d as i64 - p as i64 } else { d as i64 }
                    })
                    .collect();
                (agg, "aggregate broadcast")
            } else {
                continue;
            };
            reconstructions.push(Reconstruction {
                epoch,
                honest: honest.clone(),
                honest_seed_sum: honest_seed.entries().to_vec(),
                honest_update_sum: sum,
                source: source.into(),
            });
        }
    }

    let allowed_to_server = [
        MessageKind::PkShare,
        MessageKind::SeedCiphertexts,
        MessageKind::KeySwitchShareMsg,
        MessageKind::MaskedUpload,
    ];
    let leader_honest = !colluders.clients.contains(&ctx.config.leader);
    let structural_ok = secrets_at_server == 0
        && server_inbound.iter().all(|k| allowed_to_server.contains(k))
        && honest_to_coalition.keys().all(|k| {
            allowed_to_server.iter().any(|a| a.name() == k)
                || (k == MessageKind::ReEncKeyDeliver.name() && leader_honest)
        });
    let single = if in_range.1 > 0 {
        in_range.0 as f64 / in_range.1 as f64
    } else {
        0.0
    };
    Ok(AuditReport {
        colluders: colluders.to_string(),
        honest,
        reconstructions,
        uniformity: uniform,
        structural: StructuralReport {
            server_inbound: server_inbound.into_iter().collect(),
            honest_to_coalition,
            secrets_at_server,
            single_unmask_in_range: single,
            passed: structural_ok,
        },
    })
}
