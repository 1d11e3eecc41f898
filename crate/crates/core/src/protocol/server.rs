use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::message::{Destination, Message, MessageKind, Outgoing, PartyRef, Payload};
use super::SessionContext;
use crate::bfv::{Ciphertext, PublicKey};
use crate::codec::{self, MaskedVector};
use crate::error::{Error, Result};
use crate::mkbfv::{self, KeySwitchShare};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServerPhase {
    Idle,
    CollectPk,
    CollectCiphertexts,
    CollectShares,
    CollectMasked,
}

impl fmt::Display for ServerPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The aggregator. Holds only public keys, ciphertexts, key-switch shares
/// and masked vectors.
pub struct ServerState {
    ctx: Arc<SessionContext>,
    phase: ServerPhase,
    run: u32,
    epoch: u32,
    last_msa_run: Option<u32>,
    completed: bool,
    pk_shares: BTreeMap<u32, PublicKey>,
    seed_cts: BTreeMap<u32, Vec<Ciphertext>>,
    aggregate: Vec<Ciphertext>,
    shares: BTreeMap<u32, Vec<KeySwitchShare>>,
    masked: BTreeMap<u32, MaskedVector>,
}

impl fmt::Debug for ServerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ServerState")
            .field("phase", &self.phase)
            .field("run", &self.run)
            .field("epoch", &self.epoch)
            .finish_non_exhaustive()
    }
}

impl ServerState {
    pub fn new(ctx: Arc<SessionContext>) -> Self {
        Self {
            ctx,
            phase: ServerPhase::Idle,
            run: 0,
            epoch: 0,
            last_msa_run: None,
            completed: false,
            pk_shares: BTreeMap::new(),
            seed_cts: BTreeMap::new(),
            aggregate: Vec::new(),
            shares: BTreeMap::new(),
            masked: BTreeMap::new(),
        }
    }

    pub fn phase(&self) -> ServerPhase {
        self.phase
    }

    fn violation(&self, what: impl fmt::Display) -> Error {
        Error::ProtocolViolation {
            message: what.to_string(),
            phase: format!("server {}", self.phase),
        }
    }

    fn broadcast(&self, epoch: u32, payload: Payload) -> Outgoing {
        Outgoing {
            to: Destination::Broadcast,
            message: Message {
                sender: PartyRef::Server,
                run: self.run,
                epoch,
                payload,
            },
        }
    }

    fn collected(&self) -> Vec<u32> {
        match self.phase {
            ServerPhase::Idle => Vec::new(),
            ServerPhase::CollectPk => self.pk_shares.keys().copied().collect(),
            ServerPhase::CollectCiphertexts => self.seed_cts.keys().copied().collect(),
            ServerPhase::CollectShares => self.shares.keys().copied().collect(),
            ServerPhase::CollectMasked => self.masked.keys().copied().collect(),
        }
    }

    /// Call once all of a round's messages were delivered. Every round must
    /// close a collection; one left open means some client never sent.
    pub fn finish_round(&mut self) -> Result<()> {
        if std::mem::take(&mut self.completed) {
            return Ok(());
        }
        let have = self.collected();
        let missing = self
            .ctx
            .client_ids()
            .into_iter()
            .find(|id| !have.contains(id))
            .expect("open collection lacks a party");
        Err(Error::MissingParty(missing))
    }

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
        let id = match msg.sender {
            PartyRef::Client(id) if (id as usize) < self.ctx.n_clients() => id,
            other => return Err(self.violation(format!("{kind} from {other}"))),
        };
        let n = self.ctx.n_clients();
        match (self.phase, kind) {
            (ServerPhase::Idle, MessageKind::PkShare) => {
                if self.last_msa_run.is_some_and(|r| msg.run <= r) {
                    return Err(self.violation(format!("{kind} for stale run {}", msg.run)));
                }
                self.run = msg.run;
                self.last_msa_run = Some(msg.run);
                self.phase = ServerPhase::CollectPk;
            }
            (ServerPhase::Idle, MessageKind::MaskedUpload) => {
                if msg.epoch <= self.epoch {
                    return Err(self.violation(format!("{kind} for stale epoch {}", msg.epoch)));
                }
                self.epoch = msg.epoch;
                self.run = msg.run;
                self.phase = ServerPhase::CollectMasked;
            }
            (ServerPhase::CollectPk, MessageKind::PkShare)
            | (ServerPhase::CollectCiphertexts, MessageKind::SeedCiphertexts)
            | (ServerPhase::CollectShares, MessageKind::KeySwitchShareMsg) => {
                if msg.run != self.run {
                    return Err(self.violation(format!("{kind} for run {}", msg.run)));
                }
            }
            (ServerPhase::CollectMasked, MessageKind::MaskedUpload) => {
                if msg.epoch != self.epoch {
                    return Err(self.violation(format!("{kind} for epoch {}", msg.epoch)));
                }
            }
            _ => return Err(self.violation(kind)),
        }
        let epoch = msg.epoch;
        let fresh = match msg.payload {
            Payload::PkShare(pk) => self.pk_shares.insert(id, pk).is_none(),
            Payload::SeedCiphertexts(cts) => {
                let expected = self.ctx.config.ciphertexts_per_run()?;
                if cts.len() != expected {
                    return Err(Error::LengthMismatch {
                        expected,
                        got: cts.len(),
                    });
                }
                self.seed_cts.insert(id, cts).is_none()
            }
            Payload::KeySwitchShareMsg(shares) => {
                if shares.len() != self.aggregate.len() {
                    return Err(Error::LengthMismatch {
                        expected: self.aggregate.len(),
                        got: shares.len(),
                    });
                }
                if shares.iter().any(|s| s.party != id) {
                    return Err(self.violation(format!("{kind} carrying another party's share")));
                }
                self.shares.insert(id, shares).is_none()
            }
            Payload::MaskedUpload(y) => self.masked.insert(id, y).is_none(),
            _ => unreachable!("filtered above"),
        };
        if !fresh {
            return Err(Error::DuplicateParty(id));
        }
        if self.collected().len() < n {
            return Ok(Vec::new());
        }
        self.completed = true;
        self.complete(epoch).map(|o| vec![o])
    }

    fn complete(&mut self, epoch: u32) -> Result<Outgoing> {
        let out = match self.phase {
            ServerPhase::CollectPk => {
                let pks: Vec<PublicKey> = std::mem::take(&mut self.pk_shares).into_values().collect();
                let cpk = mkbfv::combine_public_keys(&pks)?;
                self.phase = ServerPhase::CollectCiphertexts;
                self.broadcast(0, Payload::CpkBroadcast(cpk))
            }
            ServerPhase::CollectCiphertexts => {
                let mut all = std::mem::take(&mut self.seed_cts).into_values();
                let mut agg = all.next().expect("at least one client");
                for cts in all {
                    for (a, c) in agg.iter_mut().zip(&cts) {
                        a.add_assign(c)?;
                    }
                }
                self.aggregate = agg.clone();
                self.phase = ServerPhase::CollectShares;
                self.broadcast(0, Payload::AggCiphertextBroadcast(agg))
            }
            ServerPhase::CollectShares => {
                let parties = self.ctx.client_ids();
                let shares = std::mem::take(&mut self.shares);
                let aggregate = std::mem::take(&mut self.aggregate);
                let mut reenc = Vec::with_capacity(aggregate.len());
                for (i, ct) in aggregate.iter().enumerate() {
                    let col: Vec<KeySwitchShare> = shares.values().map(|s| s[i].clone()).collect();
                    reenc.push(mkbfv::pks_merge(ct, &col, &parties)?);
                }
                self.phase = ServerPhase::Idle;
                self.broadcast(0, Payload::ReEncCtBroadcast(reenc))
            }
            ServerPhase::CollectMasked => {
                let uploads: Vec<MaskedVector> = std::mem::take(&mut self.masked).into_values().collect();
                let y0 = codec::aggregate_masked(&uploads, self.ctx.quant.p())?;
                self.phase = ServerPhase::Idle;
                self.broadcast(epoch, Payload::MaskedAggBroadcast(y0))
            }
            ServerPhase::Idle => unreachable!("completion outside a collection"),
        };
        Ok(out)
    }
}
