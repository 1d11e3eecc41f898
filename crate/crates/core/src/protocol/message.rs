use std::fmt;

use serde::{Deserialize, Serialize};

use super::SessionContext;
use crate::bfv::{Ciphertext, PublicKey};
use crate::codec::{decode_masked, encode_masked, masked_wire_len, MaskedVector};
use crate::error::{Error, Result};
use crate::mkbfv::{KeySwitchShare, ReEncKeyPair};
use crate::wire::Reader;

/// Sender or receiver of a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PartyRef {
    Server,
    Client(u32),
}

impl PartyRef {
    const SERVER_ID: u32 = u32::MAX;

    pub fn to_wire(self) -> u32 {
        match self {
            PartyRef::Server => Self::SERVER_ID,
            PartyRef::Client(id) => id,
        }
    }

    pub fn from_wire(v: u32) -> Self {
        if v == Self::SERVER_ID {
            PartyRef::Server
        } else {
            PartyRef::Client(v)
        }
    }
}

impl fmt::Display for PartyRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyRef::Server => f.write_str("server"),
            PartyRef::Client(id) => write!(f, "client {id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u32)]
pub enum MessageKind {
    PkShare = 1,
    CpkBroadcast = 2,
    ReEncKeyDeliver = 3,
    SeedCiphertexts = 4,
    AggCiphertextBroadcast = 5,
    KeySwitchShareMsg = 6,
    ReEncCtBroadcast = 7,
    MaskedUpload = 8,
    MaskedAggBroadcast = 9,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::PkShare,
        MessageKind::CpkBroadcast,
        MessageKind::ReEncKeyDeliver,
        MessageKind::SeedCiphertexts,
        MessageKind::AggCiphertextBroadcast,
        MessageKind::KeySwitchShareMsg,
        MessageKind::ReEncCtBroadcast,
        MessageKind::MaskedUpload,
        MessageKind::MaskedAggBroadcast,
    ];

    pub fn from_tag(tag: u32) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| *k as u32 == tag)
            .ok_or_else(|| Error::Decode(format!("unknown message tag {tag}")))
    }

    /// Whether the message belongs to the seed-agreement protocol.
    pub fn is_msa(self) -> bool {
        !matches!(self, MessageKind::MaskedUpload | MessageKind::MaskedAggBroadcast)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::PkShare => "PkShare",
            MessageKind::CpkBroadcast => "CpkBroadcast",
            MessageKind::ReEncKeyDeliver => "ReEncKeyDeliver",
            MessageKind::SeedCiphertexts => "SeedCiphertexts",
            MessageKind::AggCiphertextBroadcast => "AggCiphertextBroadcast",
            MessageKind::KeySwitchShareMsg => "KeySwitchShareMsg",
            MessageKind::ReEncCtBroadcast => "ReEncCtBroadcast",
            MessageKind::MaskedUpload => "MaskedUpload",
            MessageKind::MaskedAggBroadcast => "MaskedAggBroadcast",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    PkShare(PublicKey),
    CpkBroadcast(PublicKey),
    ReEncKeyDeliver(ReEncKeyPair),
    SeedCiphertexts(Vec<Ciphertext>),
    AggCiphertextBroadcast(Vec<Ciphertext>),
    /// One share per aggregate ciphertext, in order.
    KeySwitchShareMsg(Vec<KeySwitchShare>),
    ReEncCtBroadcast(Vec<Ciphertext>),
    MaskedUpload(MaskedVector),
    MaskedAggBroadcast(MaskedVector),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::PkShare(_) => MessageKind::PkShare,
            Payload::CpkBroadcast(_) => MessageKind::CpkBroadcast,
            Payload::ReEncKeyDeliver(_) => MessageKind::ReEncKeyDeliver,
            Payload::SeedCiphertexts(_) => MessageKind::SeedCiphertexts,
            Payload::AggCiphertextBroadcast(_) => MessageKind::AggCiphertextBroadcast,
            Payload::KeySwitchShareMsg(_) => MessageKind::KeySwitchShareMsg,
            Payload::ReEncCtBroadcast(_) => MessageKind::ReEncCtBroadcast,
            Payload::MaskedUpload(_) => MessageKind::MaskedUpload,
            Payload::MaskedAggBroadcast(_) => MessageKind::MaskedAggBroadcast,
        }
    }
}

/// Fixed 16-byte header: tag, sender, run id, epoch, all u32 LE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Envelope {
    pub kind: MessageKind,
    pub sender: PartyRef,
    pub run: u32,
    pub epoch: u32,
}

impl Envelope {
    pub const BYTES: usize = 16;

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        out.extend_from_slice(&self.sender.to_wire().to_le_bytes());
        out.extend_from_slice(&self.run.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        Self::read(&mut r)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self {
            kind: MessageKind::from_tag(r.u32()?)?,
            sender: PartyRef::from_wire(r.u32()?),
            run: r.u32()?,
            epoch: r.u32()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub sender: PartyRef,
    pub run: u32,
    /// Global epoch number for HMA messages; zero for MSA messages.
    pub epoch: u32,
    pub payload: Payload,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    pub fn envelope(&self) -> Envelope {
        Envelope {
            kind: self.kind(),
            sender: self.sender,
            run: self.run,
            epoch: self.epoch,
        }
    }

    pub fn encode(&self, ctx: &SessionContext) -> Vec<u8> {
        let mut out = Vec::new();
        self.envelope().write_to(&mut out);
        fn cts(out: &mut Vec<u8>, cts: &[Ciphertext]) {
            out.extend_from_slice(&(cts.len() as u32).to_le_bytes());
            for ct in cts {
                ct.write_to(out);
            }
        }
        match &self.payload {
            Payload::PkShare(pk) | Payload::CpkBroadcast(pk) => pk.write_to(&mut out),
            Payload::ReEncKeyDeliver(kp) => kp.write_to(&mut out),
            Payload::SeedCiphertexts(v)
            | Payload::AggCiphertextBroadcast(v)
            | Payload::ReEncCtBroadcast(v) => cts(&mut out, v),
            Payload::KeySwitchShareMsg(shares) => {
                out.extend_from_slice(&(shares.len() as u32).to_le_bytes());
                for s in shares {
                    s.write_to(&mut out);
                }
            }
            Payload::MaskedUpload(v) | Payload::MaskedAggBroadcast(v) => {
                out.extend_from_slice(&encode_masked(v, ctx.shprg_params().log_p))
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], ctx: &SessionContext) -> Result<Self> {
        let params = ctx.bfv.params();
        let mut r = Reader::new(bytes);
        let env = Envelope::read(&mut r)?;
        let count = |r: &mut Reader<'_>| -> Result<usize> {
            let c = r.u32()? as usize;
            // every element is at least a ring header long
            if c > r.remaining() {
                return Err(Error::Decode(format!("implausible element count {c}")));
            }
            Ok(c)
        };
        let cts = |r: &mut Reader<'_>| -> Result<Vec<Ciphertext>> {
            let c = count(r)?;
            (0..c).map(|_| Ciphertext::read_from(params, r)).collect()
        };
        let masked = |r: &mut Reader<'_>| -> Result<MaskedVector> {
            let log_p = ctx.shprg_params().log_p;
            let len = ctx.config.model_size;
            decode_masked(r.take(masked_wire_len(len, log_p))?, len, log_p)
        };
        let payload = match env.kind {
            MessageKind::PkShare => Payload::PkShare(PublicKey::read_from(params, &mut r)?),
            MessageKind::CpkBroadcast => {
                Payload::CpkBroadcast(PublicKey::read_from(params, &mut r)?)
            }
            MessageKind::ReEncKeyDeliver => {
                Payload::ReEncKeyDeliver(ReEncKeyPair::read_from(params, &mut r)?)
            }
            MessageKind::SeedCiphertexts => Payload::SeedCiphertexts(cts(&mut r)?),
            MessageKind::AggCiphertextBroadcast => Payload::AggCiphertextBroadcast(cts(&mut r)?),
            MessageKind::ReEncCtBroadcast => Payload::ReEncCtBroadcast(cts(&mut r)?),
            MessageKind::KeySwitchShareMsg => {
                let c = count(&mut r)?;
                Payload::KeySwitchShareMsg(
                    (0..c)
                        .map(|_| KeySwitchShare::read_from(params, &mut r))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            MessageKind::MaskedUpload => Payload::MaskedUpload(masked(&mut r)?),
            MessageKind::MaskedAggBroadcast => Payload::MaskedAggBroadcast(masked(&mut r)?),
        };
        r.finish()?;
        Ok(Self {
            sender: env.sender,
            run: env.run,
            epoch: env.epoch,
            payload,
        })
    }
}

/// Where an emitted message goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Destination {
    Server,
    /// Every client, from the server.
    Broadcast,
    /// Client-to-client secure channel, outside the server's view.
    Secure(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub to: Destination,
    pub message: Message,
}
