use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::message::{Destination, Message, MessageKind, Outgoing, PartyRef, Payload};
use super::SessionContext;
use crate::bfv::{Ciphertext, PublicKey, SecretKey};
use crate::codec::{self, AggregateVector, QuantizedVector};
use crate::error::{Error, Result};
use crate::mkbfv::{self, ReEncKeyPair};
use crate::shprg::{sample_seed, MaskStream, Seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClientPhase {
    Idle,
    AwaitCpk,
    AwaitAggregate,
    AwaitReEncrypted,
    Ready,
    AwaitMaskedAggregate,
}

impl fmt::Display for ClientPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// What a client learns at the end of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutput {
    pub epoch: u32,
    pub aggregate: AggregateVector,
    pub model_sum: Vec<f64>,
    pub clipped: usize,
}

/// Private per-epoch material a colluding client hands over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewEntry {
    pub seed: Seed,
    pub demask: Seed,
    pub quantized: QuantizedVector,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientView {
    pub id: u32,
    pub epochs: BTreeMap<u32, ViewEntry>,
}

struct MsaKeys {
    sk: SecretKey,
    cpk: Option<PublicKey>,
    reenc: Option<ReEncKeyPair>,
}

pub struct ClientState {
    id: u32,
    ctx: Arc<SessionContext>,
    rng: ChaCha20Rng,
    phase: ClientPhase,
    run: u32,
    keys: Option<MsaKeys>,
    seed_bank: BTreeMap<u32, Seed>,
    demask_bank: BTreeMap<u32, Seed>,
    pending: Option<(u32, MaskStream, usize)>,
    cursor: u32,
    output: Option<EpochOutput>,
    view: Option<ClientView>,
}

impl fmt::Debug for ClientState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClientState")
            .field("id", &self.id)
            .field("phase", &self.phase)
            .field("run", &self.run)
            .field("seeds", &self.seed_bank.len())
            .field("demask_seeds", &self.demask_bank.len())
            .field("cursor", &self.cursor)
            .finish_non_exhaustive()
    }
}

impl ClientState {
    pub fn new(id: u32, ctx: Arc<SessionContext>, rng: ChaCha20Rng) -> Self {
        Self {
            id,
            ctx,
            rng,
            phase: ClientPhase::Idle,
            run: 0,
            keys: None,
            seed_bank: BTreeMap::new(),
            demask_bank: BTreeMap::new(),
            pending: None,
            cursor: 0,
            output: None,
            view: None,
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn phase(&self) -> ClientPhase {
        self.phase
    }

    pub fn is_leader(&self) -> bool {
        self.id == self.ctx.config.leader
    }

    /// Keep a copy of per-epoch seeds and quantized updates for auditing.
    pub fn record_view(&mut self, on: bool) {
        self.view = on.then(|| ClientView {
            id: self.id,
            epochs: BTreeMap::new(),
        });
    }

    pub fn view(&self) -> Option<&ClientView> {
        self.view.as_ref()
    }

    pub fn take_output(&mut self) -> Option<EpochOutput> {
        self.output.take()
    }

    pub fn seed_epochs(&self) -> Vec<u32> {
        self.seed_bank.keys().copied().collect()
    }

    pub fn demask_epochs(&self) -> Vec<u32> {
        self.demask_bank.keys().copied().collect()
    }

    /// Peek at a demasking seed; used by tests comparing against an oracle.
    pub fn demask_seed(&self, epoch: u32) -> Option<&Seed> {
        self.demask_bank.get(&epoch)
    }

    pub fn seed(&self, epoch: u32) -> Option<&Seed> {
        self.seed_bank.get(&epoch)
    }

    fn violation(&self, kind: impl fmt::Display) -> Error {
        Error::ProtocolViolation {
            message: kind.to_string(),
            phase: format!("client {} {}", self.id, self.phase),
        }
    }

    fn out(&self, to: Destination, epoch: u32, payload: Payload) -> Outgoing {
        Outgoing {
            to,
            message: Message {
                sender: PartyRef::Client(self.id),
                run: self.run,
                epoch,
                payload,
            },
        }
    }

    /// Round 1 of seed agreement: fresh keys, fresh seeds for `tau` epochs
    /// starting at `first_epoch`, public-key share to the server and (leader
    /// only) the re-encryption pair to every other client.
    pub fn begin_msa(&mut self, run: u32, first_epoch: u32) -> Result<Vec<Outgoing>> {
        if self.phase != ClientPhase::Idle {
            return Err(self.violation("begin of seed agreement"));
        }
        if first_epoch <= self.cursor || (run < self.run && self.cursor > 0) {
            return Err(Error::InvalidParams(format!(
                "seed agreement run {run} for epoch {first_epoch} does not advance past epoch {}",
                self.cursor
            )));
        }
        let ctx = self.ctx.clone();
        self.run = run;
        let tau = ctx.config.tau as u32;
        for e in first_epoch..first_epoch + tau {
            self.seed_bank
                .insert(e, sample_seed(ctx.shprg_params(), &mut self.rng));
        }
        let (sk, pk) = ctx.bfv.keygen(&ctx.crs_a, &mut self.rng)?;
        let mut out = vec![self.out(Destination::Server, 0, Payload::PkShare(pk))];
        let mut reenc = None;
        if self.is_leader() {
            let kp = mkbfv::gen_reenc_keypair(&ctx.bfv, &mut self.rng)?;
            for j in ctx.client_ids().into_iter().filter(|&j| j != self.id) {
                out.push(self.out(
                    Destination::Secure(j),
                    0,
                    Payload::ReEncKeyDeliver(kp.clone()),
                ));
            }
            reenc = Some(kp);
        }
        self.keys = Some(MsaKeys {
            sk,
            cpk: None,
            reenc,
        });
        self.phase = ClientPhase::AwaitCpk;
        Ok(out)
    }

    /// Installs one seed pair directly, bypassing seed agreement. Lets a
    /// simulation substitute an ideal seed-sum functionality.
    pub fn install_seed_pair(&mut self, epoch: u32, seed: Seed, demask: Seed) -> Result<()> {
        if !matches!(self.phase, ClientPhase::Idle | ClientPhase::Ready) || epoch <= self.cursor {
            return Err(self.violation("seed installation"));
        }
        self.seed_bank.insert(epoch, seed);
        self.demask_bank.insert(epoch, demask);
        self.phase = ClientPhase::Ready;
        Ok(())
    }

    /// Masks `update` with this epoch's seed and uploads it. Both seeds of
    /// the pair are consumed here.
    pub fn begin_epoch(&mut self, epoch: u32, update: &[f64]) -> Result<Vec<Outgoing>> {
        if self.phase != ClientPhase::Ready {
            return Err(self.violation(format!("begin of epoch {epoch}")));
        }
        if epoch <= self.cursor {
            return Err(Error::InvalidParams(format!(
                "epoch {epoch} does not advance past {}",
                self.cursor
            )));
        }
        if update.len() != self.ctx.config.model_size {
            return Err(Error::LengthMismatch {
                expected: self.ctx.config.model_size,
                got: update.len(),
            });
        }
        let (Some(demask), Some(seed)) = (self.demask_bank.get(&epoch), self.seed_bank.get(&epoch))
        else {
            return Err(self.violation(format!("epoch {epoch} without an agreed seed pair")));
        };
        let ctx = self.ctx.clone();
        let x = codec::quantize(update, &ctx.quant)?;
        let mut streams = ctx.shprg.expand_many(&[seed, demask], update.len())?;
        let g0 = streams.pop().expect("two streams");
        let gu = streams.pop().expect("two streams");
        let y = codec::mask(&x, &gu, ctx.quant.p())?;

        let seed = self.seed_bank.remove(&epoch).expect("checked");
        let demask = self.demask_bank.remove(&epoch).expect("checked");
        let clipped = x.clipped;
        if let Some(view) = &mut self.view {
            view.epochs.insert(
                epoch,
                ViewEntry {
                    seed,
                    demask,
                    quantized: x,
                },
            );
        }
        self.cursor = epoch;
        self.pending = Some((epoch, g0, clipped));
        self.phase = ClientPhase::AwaitMaskedAggregate;
        Ok(vec![self.out(
            Destination::Server,
            epoch,
            Payload::MaskedUpload(y),
        )])
    }

    /// Processes one round's deliveries; arrival order within the round is
    /// irrelevant.
    pub fn step(&mut self, mut inbox: Vec<Message>) -> Result<Vec<Outgoing>> {
        inbox.sort_by_key(|m| (m.sender, m.kind()));
        let mut out = Vec::new();
        for msg in inbox {
            out.extend(self.handle(msg)?);
        }
        Ok(out)
    }

    fn handle(&mut self, msg: Message) -> Result<Vec<Outgoing>> {
        let kind = msg.kind();
        let from_server = msg.sender == PartyRef::Server;
        let expected_sender = match kind {
            MessageKind::ReEncKeyDeliver => {
                msg.sender == PartyRef::Client(self.ctx.config.leader) && !self.is_leader()
            }
            MessageKind::CpkBroadcast
            | MessageKind::AggCiphertextBroadcast
            | MessageKind::ReEncCtBroadcast
            | MessageKind::MaskedAggBroadcast => from_server,
            _ => false,
        };
        let in_run = msg.run == self.run;
        if !expected_sender || !in_run {
            return Err(self.violation(format!("{kind} from {} for run {}", msg.sender, msg.run)));
        }
        match (self.phase, msg.payload) {
            (ClientPhase::AwaitCpk, Payload::CpkBroadcast(cpk)) => {
                let keys = self.keys.as_mut().expect("keys exist while awaiting cpk");
                if keys.cpk.replace(cpk).is_some() {
                    return Err(self.violation(format!("second {kind}")));
                }
                self.try_upload_seeds()
            }
            (ClientPhase::AwaitCpk, Payload::ReEncKeyDeliver(kp)) => {
                let keys = self.keys.as_mut().expect("keys exist while awaiting cpk");
                if keys.reenc.replace(kp).is_some() {
                    return Err(self.violation(format!("second {kind}")));
                }
                self.try_upload_seeds()
            }
            (ClientPhase::AwaitAggregate, Payload::AggCiphertextBroadcast(cts)) => {
                self.key_switch_shares(&cts)
            }
            (ClientPhase::AwaitReEncrypted, Payload::ReEncCtBroadcast(cts)) => {
                self.recover_demask_seeds(&cts)?;
                Ok(Vec::new())
            }
            (ClientPhase::AwaitMaskedAggregate, Payload::MaskedAggBroadcast(y0)) => {
                let (epoch, g0, clipped) = self.pending.take().expect("pending epoch");
                if msg.epoch != epoch {
                    self.pending = Some((epoch, g0, clipped));
                    return Err(self.violation(format!("{kind} for epoch {}", msg.epoch)));
                }
                let aggregate = codec::unmask(&y0, &g0, &self.ctx.quant)?;
                let model_sum = codec::dequantize(&aggregate, &self.ctx.quant)?;
                self.output = Some(EpochOutput {
                    epoch,
                    aggregate,
                    model_sum,
                    clipped,
                });
                self.phase = if self.seed_bank.is_empty() {
                    ClientPhase::Idle
                } else {
                    ClientPhase::Ready
                };
                Ok(Vec::new())
            }
            _ => Err(self.violation(kind)),
        }
    }

    fn try_upload_seeds(&mut self) -> Result<Vec<Outgoing>> {
        let ctx = self.ctx.clone();
        let keys = self.keys.as_ref().expect("keys exist while awaiting cpk");
        let (Some(cpk), Some(kp)) = (&keys.cpk, &keys.reenc) else {
            return Ok(Vec::new());
        };
        if !mkbfv::verify_reenc(&ctx.bfv, kp, &mut self.rng)? {
            return Err(Error::ReEncKeyInvalid(self.id));
        }
        let seeds: Vec<Seed> = self.seed_bank.values().cloned().collect();
        let n = ctx.bfv.params().degree();
        let mut cts = Vec::new();
        for row in codec::pack_seeds(&seeds, n)? {
            let pt = ctx.bfv.encode(&row)?;
            cts.push(ctx.bfv.encrypt(cpk, &pt, &mut self.rng)?);
        }
        self.phase = ClientPhase::AwaitAggregate;
        Ok(vec![self.out(
            Destination::Server,
            0,
            Payload::SeedCiphertexts(cts),
        )])
    }

    fn key_switch_shares(&mut self, cts: &[Ciphertext]) -> Result<Vec<Outgoing>> {
        let ctx = self.ctx.clone();
        let expected = ctx.config.ciphertexts_per_run()?;
        if cts.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: cts.len(),
            });
        }
        let keys = self.keys.as_ref().expect("keys exist during agreement");
        let pk_r = &keys.reenc.as_ref().expect("verified pair").pk_r;
        let shares = cts
            .iter()
            .map(|ct| mkbfv::pks_share(&ctx.bfv, self.id, &keys.sk, ct, pk_r, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        self.phase = ClientPhase::AwaitReEncrypted;
        Ok(vec![self.out(
            Destination::Server,
            0,
            Payload::KeySwitchShareMsg(shares),
        )])
    }

    fn recover_demask_seeds(&mut self, cts: &[Ciphertext]) -> Result<()> {
        let ctx = self.ctx.clone();
        let keys = self.keys.take().expect("keys exist during agreement");
        let sk_r = &keys.reenc.as_ref().expect("verified pair").sk_r;
        let arrays = cts
            .iter()
            .map(|ct| Ok(ctx.bfv.decrypt(sk_r, ct)?.coeffs().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let sums = codec::unpack_seeds(&arrays, ctx.shprg_params(), ctx.config.tau)?;
        for (&epoch, sum) in self.seed_bank.keys().zip(sums) {
            self.demask_bank.insert(epoch, sum);
        }
        self.phase = ClientPhase::Ready;
        Ok(())
    }
}
