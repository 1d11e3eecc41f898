use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::bfv::{Bfv, Ciphertext};
use crate::codec::{self, masked_wire_len};
use crate::error::{Error, Result};
use crate::mkbfv::{self, KeySwitchShare};
use crate::protocol::Envelope;
use crate::ring::{sample_uniform, RingParams, SamplerConfig};
use crate::shprg::{sample_seed, Seed, Setting, Shprg, ShprgParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub settings: Vec<Setting>,
    pub model_sizes: Vec<usize>,
    pub n_clients: usize,
    pub tau: usize,
    /// Timed repetitions per cell; the median is reported.
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            settings: Setting::ALL.to_vec(),
            model_sizes: vec![10_000, 100_000, 1_000_000],
            n_clients: 10,
            tau: 100,
            reps: 100,
            seed: 1,
        }
    }
}

/// One CSV row. MSA columns are per client per run and empty when the
/// setting cannot carry seeds in the plaintext space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub setting: String,
    pub model_size: usize,
    pub n_clients: usize,
    pub tau: usize,
    pub reps: usize,
    pub mask_expand_ms: f64,
    pub msa_keygen_ms: Option<f64>,
    pub msa_enc_ms: Option<f64>,
    pub msa_pks_ms: Option<f64>,
    pub msa_dec_ms: Option<f64>,
    pub msa_client_ms: Option<f64>,
    pub server_agg_ms: Option<f64>,
    pub server_merge_ms: Option<f64>,
    pub hma_upload_bytes: usize,
    pub msa_upload_bytes: Option<usize>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_secs_f64() * 1e3))
}

/// Median wall time of one uncached mask expansion of length `m`.
pub fn time_mask_expand(params: &ShprgParams, m: usize, reps: usize, seed: u64) -> Result<f64> {
    let shprg = Shprg::new(params.clone())?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let s = sample_seed(params, &mut rng);
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let (g, ms) = timed(|| shprg.expand(&s, m))?;
        std::hint::black_box(g);
        times.push(ms);
    }
    Ok(median(times))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsaTiming {
    pub keygen_ms: f64,
    pub enc_ms: f64,
    pub pks_ms: f64,
    pub dec_ms: f64,
    pub server_agg_ms: f64,
    pub server_merge_ms: f64,
    pub upload_bytes: usize,
}

impl MsaTiming {
    pub fn client_ms(&self) -> f64 {
        self.keygen_ms + self.enc_ms + self.pks_ms + self.dec_ms
    }
}

/// Runs the seed-agreement computations of `n_clients` parties end to end
/// and reports client 0's and the server's median phase times.
pub fn time_msa(params: &ShprgParams, n_clients: usize, tau: usize, reps: usize, seed: u64) -> Result<MsaTiming> {
    let bfv = Bfv::new(RingParams::default_params(), SamplerConfig::default())?;
    codec::check_seed_modulus(params, bfv.params().plaintext_modulus())?;
    let n = bfv.params().degree();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let crs = sample_uniform(bfv.params(), &mut rng);
    let mut cols: [Vec<f64>; 6] = Default::default();
    let mut upload_bytes = 0;
    let parties: Vec<u32> = (0..n_clients as u32).collect();
    for _ in 0..reps.max(1) {
        let mut keys = Vec::new();
        for i in 0..n_clients {
            let (kp, ms) = timed(|| bfv.keygen(&crs, &mut rng))?;
            if i == 0 {
                cols[0].push(ms);
            }
            keys.push(kp);
        }
        let pks: Vec<_> = keys.iter().map(|k| k.1.clone()).collect();
        let cpk = mkbfv::combine_public_keys(&pks)?;
        let reenc = mkbfv::gen_reenc_keypair(&bfv, &mut rng)?;
        let mut all_cts: Vec<Vec<Ciphertext>> = Vec::new();
        for i in 0..n_clients {
            let seeds: Vec<Seed> = (0..tau).map(|_| sample_seed(params, &mut rng)).collect();
            let (cts, ms) = timed(|| {
                codec::pack_seeds(&seeds, n)?
                    .iter()
                    .map(|row| bfv.encrypt(&cpk, &bfv.encode(row)?, &mut rng))
                    .collect::<Result<Vec<_>>>()
            })?;
            if i == 0 {
                cols[1].push(ms);
            }
            all_cts.push(cts);
        }
        let (agg, ms) = timed(|| {
            let mut agg = all_cts[0].clone();
            for cts in &all_cts[1..] {
                for (a, c) in agg.iter_mut().zip(cts) {
                    a.add_assign(c)?;
                }
            }
            Ok(agg)
        })?;
        cols[4].push(ms);
        let mut shares: Vec<Vec<KeySwitchShare>> = Vec::new();
        for (i, (sk, _)) in keys.iter().enumerate() {
            let (s, ms) = timed(|| {
                agg.iter()
                    .map(|ct| mkbfv::pks_share(&bfv, i as u32, sk, ct, &reenc.pk_r, &mut rng))
                    .collect::<Result<Vec<_>>>()
            })?;
            if i == 0 {
                cols[2].push(ms);
            }
            shares.push(s);
        }
        let (merged, ms) = timed(|| {
            agg.iter()
                .enumerate()
                .map(|(j, ct)| {
                    let col: Vec<_> = shares.iter().map(|s| s[j].clone()).collect();
                    mkbfv::pks_merge(ct, &col, &parties)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        cols[5].push(ms);
        let (_, ms) = timed(|| {
            let arrays = merged
                .iter()
                .map(|ct| Ok(bfv.decrypt(&reenc.sk_r, ct)?.coeffs().to_vec()))
                .collect::<Result<Vec<_>>>()?;
            codec::unpack_seeds(&arrays, params, tau)
        })?;
        cols[3].push(ms);
        upload_bytes = 3 * Envelope::BYTES
            + keys[0].1.serialized_len()
            + 4
            + all_cts[0].iter().map(Ciphertext::serialized_len).sum::<usize>()
            + 4
            + shares[0].iter().map(KeySwitchShare::serialized_len).sum::<usize>();
    }
    let [k, e, p, d, a, m] = cols.map(median);
    Ok(MsaTiming {
        keygen_ms: k,
        enc_ms: e,
        pks_ms: p,
        dec_ms: d,
        server_agg_ms: a,
        server_merge_ms: m,
        upload_bytes,
    })
}

pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.n_clients == 0 || cfg.tau == 0 {
        return Err(Error::InvalidParams("bench needs clients and tau > 0".into()));
    }
    let mut rows = Vec::new();
    for &setting in &cfg.settings {
        let params = ShprgParams::preset(setting, *b"dhsa/bench/crs..................");
        let msa = match time_msa(&params, cfg.n_clients, cfg.tau, cfg.reps, cfg.seed) {
            Ok(t) => Some(t),
            Err(Error::InvalidParams(_)) => None,
            Err(e) => return Err(e),
        };
        for &m in &cfg.model_sizes {
            rows.push(BenchRow {
                setting: setting.label().to_string(),
                model_size: m,
                n_clients: cfg.n_clients,
                tau: cfg.tau,
                reps: cfg.reps,
                mask_expand_ms: time_mask_expand(&params, m, cfg.reps, cfg.seed)?,
                msa_keygen_ms: msa.map(|t| t.keygen_ms),
                msa_enc_ms: msa.map(|t| t.enc_ms),
                msa_pks_ms: msa.map(|t| t.pks_ms),
                msa_dec_ms: msa.map(|t| t.dec_ms),
                msa_client_ms: msa.map(|t| t.client_ms()),
                server_agg_ms: msa.map(|t| t.server_agg_ms),
                server_merge_ms: msa.map(|t| t.server_merge_ms),
                hma_upload_bytes: Envelope::BYTES + masked_wire_len(m, params.log_p),
                msa_upload_bytes: msa.map(|t| t.upload_bytes),
            });
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[BenchRow], w: W) -> Result<()> {
    let io = |e: csv::Error| Error::InvalidParams(format!("csv output failed: {e}"));
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(io)?;
    }
    out.flush().map_err(|e| Error::InvalidParams(format!("csv output failed: {e}")))?;
    Ok(())
}
