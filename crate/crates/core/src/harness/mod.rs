//! In-process multi-party simulation: a message bus that moves serialized
//! bytes between the protocol state machines, traffic and round accounting,
//! transcript capture for collusion audits, a toy FedAvg trainer and
//! micro-benchmarks.

mod audit;
mod bench;
mod fedavg;
mod transcript;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::codec;
use crate::error::{Error, Result};
use crate::protocol::{
    schedule, ClientState, ClientView, Destination, EpochOutput, Message, MessageKind, Outgoing,
    PartyRef, PlanStep, ServerState, SessionConfig, SessionContext,
};
use crate::shprg::{add_seeds, sample_seed};

pub use audit::{audit_colluding_view, AuditReport, Colluders, Reconstruction, StructuralReport, UniformityTest};
pub use bench::{bench, time_mask_expand, time_msa, write_csv, BenchConfig, BenchRow, MsaTiming};
pub use fedavg::{toy_fedavg, AccuracyCurve, FedAvgMode, TrainerConfig};
pub use transcript::{CaptureMode, Transcript, TranscriptEntry};

/// Where clients' demasking seeds come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum DemaskSource {
    /// The MK-BFV seed-agreement protocol.
    #[default]
    Agreement,
    /// A trusted seed-sum oracle; no MSA traffic. Isolates the masking layer.
    Ideal,
}

#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    pub master_seed: u64,
    pub capture: CaptureMode,
    pub demask: DemaskSource,
    /// Clients whose private per-epoch material is recorded.
    pub record_views: BTreeSet<u32>,
}

/// Supplies per-client model updates and consumes the aggregate.
pub trait UpdateSource {
    fn updates(&mut self, epoch: u32, n_clients: usize, model_size: usize) -> Vec<Vec<f64>>;

    fn aggregate(&mut self, _epoch: u32, _sum: &[f64]) {}

    fn should_stop(&self) -> bool {
        false
    }
}

/// Independent uniform updates in `[lo, hi)`.
#[derive(Debug, Clone)]
pub struct UniformUpdates {
    rng: ChaCha20Rng,
    lo: f64,
    hi: f64,
}

impl UniformUpdates {
    pub fn new(seed: u64, lo: f64, hi: f64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            lo,
            hi,
        }
    }
}

impl UpdateSource for UniformUpdates {
    fn updates(&mut self, _epoch: u32, n_clients: usize, model_size: usize) -> Vec<Vec<f64>> {
        (0..n_clients)
            .map(|_| {
                (0..model_size)
                    .map(|_| self.rng.gen_range(self.lo..self.hi))
                    .collect()
            })
            .collect()
    }
}

/// The same update every epoch.
#[derive(Debug, Clone)]
pub struct FixedUpdates(pub Vec<Vec<f64>>);

impl UpdateSource for FixedUpdates {
    fn updates(&mut self, _epoch: u32, _n: usize, _m: usize) -> Vec<Vec<f64>> {
        self.0.clone()
    }
}

/// Per-party generator, independent across parties and master seeds.
pub fn party_rng(master_seed: u64, party: PartyRef) -> ChaCha20Rng {
    let mut h = blake3::Hasher::new_derive_key("dhsa harness party rng v1");
    h.update(&master_seed.to_le_bytes());
    h.update(&party.to_wire().to_le_bytes());
    ChaCha20Rng::from_seed(*h.finalize().as_bytes())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PartyTraffic {
    pub party: String,
    pub msa_up: u64,
    pub msa_down: u64,
    pub hma_up: u64,
    pub hma_down: u64,
    /// Client-to-client secure channel, not seen by the server.
    pub secure_up: u64,
    pub secure_down: u64,
}

impl PartyTraffic {
    pub fn total(&self) -> u64 {
        self.msa_up + self.msa_down + self.hma_up + self.hma_down + self.secure_up + self.secure_down
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportConfig {
    pub n_clients: usize,
    pub model_size: usize,
    pub setting: String,
    pub mu: usize,
    pub log_p: u32,
    pub log_q: u32,
    pub w: u32,
    pub m_min: f64,
    pub m_max: f64,
    pub tau: usize,
    pub max_epochs: usize,
    pub master_seed: u64,
    pub demask: DemaskSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundSummary {
    pub total: u32,
    pub msa_runs: usize,
    pub hma_epochs: usize,
    /// `T + 3 ceil(T / tau)` for the epochs actually run.
    pub expected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrafficReport {
    pub parties: Vec<PartyTraffic>,
    pub total_bytes: u64,
    pub client_server_bytes: u64,
    pub secure_channel_bytes: u64,
    pub msa_bytes_per_client_run: f64,
    pub hma_bytes_per_client_epoch: f64,
    pub hma_upload_bytes: u64,
    pub msa_round2_upload_bytes: u64,
}

/// Per-epoch client traffic relative to plain uploads and downloads of
/// the model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inflation {
    /// MSA traffic amortized over `tau` epochs, plus HMA, vs 32-bit floats.
    pub vs_float32: f64,
    /// The same against 16-bit quantized values.
    pub vs_quant16: f64,
    pub hma_only_vs_quant16: f64,
    pub msa_amortized_vs_quant16: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correctness {
    /// Pre-dequantization error of the aggregate, entry count per value.
    pub error_histogram: BTreeMap<i64, u64>,
    pub bound: i64,
    pub violations: u64,
    pub max_abs_model_error: f64,
    pub model_error_bound: f64,
    /// Entries where some client's output differed from client 0's.
    pub output_disagreements: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timing {
    pub msa_ms: f64,
    pub hma_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionReport {
    pub config: ReportConfig,
    pub rounds: RoundSummary,
    pub traffic: TrafficReport,
    pub inflation: Inflation,
    pub correctness: Correctness,
    pub clip_rate: f64,
    pub timing: Timing,
}

impl SessionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON without wall-clock fields; equal across identical runs.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("timing");
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}

#[derive(Debug)]
pub struct SessionOutput {
    pub report: SessionReport,
    pub transcript: Transcript,
    pub views: Vec<ClientView>,
    /// Client 0's per-epoch results.
    pub outputs: Vec<EpochOutput>,
}

pub fn run_session(
    config: SessionConfig,
    source: &mut dyn UpdateSource,
    opts: &SessionOptions,
) -> Result<SessionOutput> {
    run_session_in(SessionContext::new(config)?, source, opts)
}

/// Like [`run_session`] on a prepared context, so repeated sessions share
/// the derived public material.
pub fn run_session_in(
    ctx: Arc<SessionContext>,
    source: &mut dyn UpdateSource,
    opts: &SessionOptions,
) -> Result<SessionOutput> {
    let start = Instant::now();
    let mut sim = Simulation::new(ctx.clone(), opts);
    let plan = schedule(ctx.config.tau, ctx.config.max_epochs);
    for step in plan.steps {
        match step {
            PlanStep::Msa { run, first_epoch } => {
                let t = Instant::now();
                sim.msa(run, first_epoch).map_err(|e| Error::Aborted {
                    phase: format!("seed agreement run {run}"),
                    source: Box::new(e),
                })?;
                sim.timing.msa_ms += ms(t);
            }
            PlanStep::Hma { epoch, .. } => {
                let updates = source.updates(epoch, ctx.n_clients(), ctx.config.model_size);
                let t = Instant::now();
                let sum = sim.hma(epoch, &updates).map_err(|e| Error::Aborted {
                    phase: format!("aggregation epoch {epoch}"),
                    source: Box::new(e),
                })?;
                sim.timing.hma_ms += ms(t);
                source.aggregate(epoch, &sum);
                if source.should_stop() {
                    break;
                }
            }
        }
    }
    sim.timing.total_ms = ms(start);
    Ok(sim.finish())
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

struct Simulation {
    ctx: Arc<SessionContext>,
    opts: SessionOptions,
    clients: Vec<ClientState>,
    server: ServerState,
    oracle_rng: ChaCha20Rng,
    transcript: Transcript,
    traffic: Vec<PartyTraffic>,
    round: u32,
    msa_runs: usize,
    hma_epochs: usize,
    broadcasts: Vec<Message>,
    secure: Vec<Vec<Message>>,
    histogram: BTreeMap<i64, u64>,
    max_model_error: f64,
    disagreements: u64,
    clipped: u64,
    hma_upload_bytes: u64,
    msa_round2_upload_bytes: u64,
    outputs: Vec<EpochOutput>,
    timing: Timing,
}

impl Simulation {
    fn new(ctx: Arc<SessionContext>, opts: &SessionOptions) -> Self {
        let n = ctx.n_clients();
        let clients = (0..n as u32)
            .map(|id| {
                let mut c = ClientState::new(id, ctx.clone(), party_rng(opts.master_seed, PartyRef::Client(id)));
                c.record_view(opts.record_views.contains(&id));
                c
            })
            .collect();
        let mut traffic: Vec<PartyTraffic> = (0..n)
            .map(|i| PartyTraffic {
                party: format!("client {i}"),
                ..Default::default()
            })
            .collect();
        traffic.push(PartyTraffic {
            party: "server".into(),
            ..Default::default()
        });
        Self {
            server: ServerState::new(ctx.clone()),
            oracle_rng: party_rng(opts.master_seed ^ 0x6f72_6163_6c65, PartyRef::Server),
            ctx,
            opts: opts.clone(),
            clients,
            transcript: Transcript::default(),
            traffic,
            round: 0,
            msa_runs: 0,
            hma_epochs: 0,
            broadcasts: Vec::new(),
            secure: vec![Vec::new(); n],
            histogram: BTreeMap::new(),
            max_model_error: 0.0,
            disagreements: 0,
            clipped: 0,
            hma_upload_bytes: 0,
            msa_round2_upload_bytes: 0,
            outputs: Vec::new(),
            timing: Timing::default(),
        }
    }

    fn slot(&self, p: PartyRef) -> usize {
        match p {
            PartyRef::Server => self.ctx.n_clients(),
            PartyRef::Client(id) => id as usize,
        }
    }

    /// Serializes, logs and accounts one message, and returns what the
    /// receivers decode.
    fn post(&mut self, out: Outgoing) -> Result<(Destination, Message)> {
        let bytes: Arc<[u8]> = out.message.encode(&self.ctx).into();
        let digest = *blake3::hash(&bytes).as_bytes();
        let msg = &out.message;
        let kind = msg.kind();
        let receivers: Vec<PartyRef> = match out.to {
            Destination::Server => vec![PartyRef::Server],
            Destination::Broadcast => self.ctx.client_ids().into_iter().map(PartyRef::Client).collect(),
            Destination::Secure(j) => vec![PartyRef::Client(j)],
        };
        let from_server = msg.sender == PartyRef::Server;
        if from_server != matches!(out.to, Destination::Broadcast)
            || matches!(out.to, Destination::Secure(j) if j as usize >= self.ctx.n_clients())
        {
            return Err(Error::ProtocolViolation {
                message: format!("{kind} from {} routed to {:?}", msg.sender, out.to),
                phase: format!("round {}", self.round),
            });
        }
        let len = bytes.len() as u64;
        let secure = matches!(out.to, Destination::Secure(_));
        for &receiver in &receivers {
            self.transcript.push(TranscriptEntry {
                round: self.round,
                kind,
                sender: msg.sender,
                receiver,
                run: msg.run,
                epoch: msg.epoch,
                len: bytes.len(),
                digest,
                bytes: (self.opts.capture == CaptureMode::Full).then(|| bytes.clone()),
            });
            let (s, r) = (self.slot(msg.sender), self.slot(receiver));
            if secure {
                self.traffic[s].secure_up += len;
                self.traffic[r].secure_down += len;
            } else if kind.is_msa() {
                self.traffic[s].msa_up += len;
                self.traffic[r].msa_down += len;
            } else {
                self.traffic[s].hma_up += len;
                self.traffic[r].hma_down += len;
            }
        }
        match kind {
            MessageKind::MaskedUpload if self.hma_upload_bytes == 0 => self.hma_upload_bytes = len,
            MessageKind::SeedCiphertexts if self.msa_round2_upload_bytes == 0 => {
                self.msa_round2_upload_bytes = len
            }
            _ => {}
        }
        let decoded = Message::decode(&bytes, &self.ctx)?;
        debug_assert_eq!(&decoded, msg);
        Ok((out.to, decoded))
    }

    /// One communication round: every client acts on what it has been sent,
    /// then the server acts on the uploads and broadcasts.
    fn round<F>(&mut self, mut act: F) -> Result<()>
    where
        F: FnMut(&mut ClientState, Vec<Message>) -> Result<Vec<Outgoing>>,
    {
        self.round += 1;
        let broadcasts = std::mem::take(&mut self.broadcasts);
        // secure-channel messages sent this round arrive with the next one
        let n = self.clients.len();
        let mut earlier = std::mem::replace(&mut self.secure, vec![Vec::new(); n]);
        let mut uploads = Vec::new();
        for (i, pending) in earlier.iter_mut().enumerate() {
            let mut inbox = broadcasts.clone();
            inbox.append(pending);
            let outs = act(&mut self.clients[i], inbox)?;
            for out in outs {
                match self.post(out)? {
                    (Destination::Server, m) => uploads.push(m),
                    (Destination::Secure(j), m) => self.secure[j as usize].push(m),
                    (Destination::Broadcast, _) => unreachable!("checked in post"),
                }
            }
        }
        let outs = self.server.step(uploads)?;
        self.server.finish_round()?;
        for out in outs {
            let (_, m) = self.post(out)?;
            self.broadcasts.push(m);
        }
        Ok(())
    }

    /// Delivers the last broadcast; clients must not answer.
    fn settle(&mut self) -> Result<()> {
        let broadcasts = std::mem::take(&mut self.broadcasts);
        for (i, c) in self.clients.iter_mut().enumerate() {
            let mut inbox = broadcasts.clone();
            inbox.append(&mut self.secure[i]);
            let outs = c.step(inbox)?;
            if let Some(o) = outs.first() {
                return Err(Error::ProtocolViolation {
                    message: format!("{} after the final broadcast", o.message.kind()),
                    phase: format!("client {i} settle"),
                });
            }
        }
        Ok(())
    }

    fn msa(&mut self, run: u32, first_epoch: u32) -> Result<()> {
        match self.opts.demask {
            DemaskSource::Agreement => {
                self.round(|c, inbox| {
                    if let Some(m) = inbox.first() {
                        return Err(Error::ProtocolViolation {
                            message: m.kind().to_string(),
                            phase: format!("client {} before seed agreement", c.id()),
                        });
                    }
                    c.begin_msa(run, first_epoch)
                })?;
                self.round(|c, inbox| c.step(inbox))?;
                self.round(|c, inbox| c.step(inbox))?;
                self.settle()?;
            }
            DemaskSource::Ideal => {
                let params = self.ctx.shprg_params().clone();
                for e in first_epoch..first_epoch + self.ctx.config.tau as u32 {
                    let seeds: Vec<_> = (0..self.clients.len())
                        .map(|_| sample_seed(&params, &mut self.oracle_rng))
                        .collect();
                    let sum = add_seeds(&seeds, &params)?;
                    for (c, s) in self.clients.iter_mut().zip(seeds) {
                        c.install_seed_pair(e, s, sum.clone())?;
                    }
                }
            }
        }
        self.msa_runs += 1;
        Ok(())
    }

    fn hma(&mut self, epoch: u32, updates: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = self.clients.len();
        if updates.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: updates.len(),
            });
        }
        self.round(|c, inbox| {
            if let Some(m) = inbox.first() {
                return Err(Error::ProtocolViolation {
                    message: m.kind().to_string(),
                    phase: format!("client {} before epoch {epoch}", c.id()),
                });
            }
            c.begin_epoch(epoch, &updates[c.id() as usize])
        })?;
        self.settle()?;
        self.hma_epochs += 1;

        let qp = &self.ctx.quant;
        let m = self.ctx.config.model_size;
        let mut oracle = vec![0i64; m];
        let mut plain = vec![0f64; m];
        for u in updates {
            let x = codec::quantize(u, qp)?;
            self.clipped += x.clipped as u64;
            for i in 0..m {
                oracle[i] += x.values[i] as i64;
                plain[i] += u[i];
            }
        }
        let outputs: Vec<EpochOutput> = self
            .clients
            .iter_mut()
            .map(|c| {
                c.take_output().ok_or_else(|| Error::ProtocolViolation {
                    message: "no aggregate".into(),
                    phase: format!("client {} epoch {epoch}", c.id()),
                })
            })
            .collect::<Result<_>>()?;
        let first = &outputs[0];
        for o in &outputs[1..] {
            self.disagreements += first
                .aggregate
                .values
                .iter()
                .zip(&o.aggregate.values)
                .filter(|(a, b)| a != b)
                .count() as u64;
        }
        for i in 0..m {
            *self.histogram.entry(first.aggregate.values[i] - oracle[i]).or_default() += 1;
            self.max_model_error = self.max_model_error.max((first.model_sum[i] - plain[i]).abs());
        }
        let sum = first.model_sum.clone();
        self.outputs.push(outputs.into_iter().next().expect("one client"));
        Ok(sum)
    }

    fn finish(self) -> SessionOutput {
        let cfg = &self.ctx.config;
        let sp = self.ctx.shprg_params();
        let n = cfg.n_clients;
        let m = cfg.model_size;
        let bound = n as i64 - 1;
        let violations = self
            .histogram
            .iter()
            .filter(|(e, _)| e.abs() > bound)
            .map(|(_, c)| c)
            .sum();
        let clients = &self.traffic[..n];
        let mean = |f: &dyn Fn(&PartyTraffic) -> u64| clients.iter().map(f).sum::<u64>() as f64 / n as f64;
        let msa_per_run = if self.msa_runs > 0 && self.opts.demask == DemaskSource::Agreement {
            mean(&|t| t.msa_up + t.msa_down) / self.msa_runs as f64
        } else {
            0.0
        };
        let hma_per_epoch = if self.hma_epochs > 0 {
            mean(&|t| t.hma_up + t.hma_down) / self.hma_epochs as f64
        } else {
            0.0
        };
        let quant16 = (2 * m * 2) as f64;
        let float32 = (2 * m * 4) as f64;
        let amortized = msa_per_run / cfg.tau as f64 + hma_per_epoch;
        let secure: u64 = self.traffic.iter().map(|t| t.secure_up).sum();
        let total = self.transcript.total_bytes();
        let report = SessionReport {
            config: ReportConfig {
                n_clients: n,
                model_size: m,
                setting: cfg.setting.label().to_string(),
                mu: sp.mu,
                log_p: sp.log_p,
                log_q: sp.log_q,
                w: cfg.w,
                m_min: cfg.m_min,
                m_max: cfg.m_max,
                tau: cfg.tau,
                max_epochs: cfg.max_epochs,
                master_seed: self.opts.master_seed,
                demask: self.opts.demask,
            },
            rounds: RoundSummary {
                total: self.round,
                msa_runs: self.msa_runs,
                hma_epochs: self.hma_epochs,
                expected: self.hma_epochs + 3 * self.hma_epochs.div_ceil(cfg.tau),
            },
            traffic: TrafficReport {
                parties: self.traffic.clone(),
                total_bytes: total,
                client_server_bytes: total - secure,
                secure_channel_bytes: secure,
                msa_bytes_per_client_run: msa_per_run,
                hma_bytes_per_client_epoch: hma_per_epoch,
                hma_upload_bytes: self.hma_upload_bytes,
                msa_round2_upload_bytes: self.msa_round2_upload_bytes,
            },
            inflation: Inflation {
                vs_float32: amortized / float32,
                vs_quant16: amortized / quant16,
                hma_only_vs_quant16: hma_per_epoch / quant16,
                msa_amortized_vs_quant16: msa_per_run / cfg.tau as f64 / quant16,
            },
            correctness: Correctness {
                error_histogram: self.histogram,
                bound,
                violations,
                max_abs_model_error: self.max_model_error,
                model_error_bound: (2 * n - 1) as f64 * self.ctx.quant.step(),
                output_disagreements: self.disagreements,
            },
            clip_rate: if self.hma_epochs > 0 {
                self.clipped as f64 / (self.hma_epochs * n * m) as f64
            } else {
                0.0
            },
            timing: self.timing,
        };
        SessionOutput {
            report,
            transcript: self.transcript,
            views: self.clients.iter().filter_map(|c| c.view().cloned()).collect(),
            outputs: self.outputs,
        }
    }
}
