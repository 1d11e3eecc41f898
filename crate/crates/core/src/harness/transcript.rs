use std::io::{self, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::protocol::{Envelope, MessageKind, PartyRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum CaptureMode {
    /// Lengths and digests only.
    #[default]
    Digest,
    /// Also keep every serialized message.
    Full,
}

/// One delivery of one serialized message to one receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub round: u32,
    pub kind: MessageKind,
    pub sender: PartyRef,
    pub receiver: PartyRef,
    pub run: u32,
    pub epoch: u32,
    pub len: usize,
    pub digest: [u8; 32],
    pub bytes: Option<Arc<[u8]>>,
}

impl TranscriptEntry {
    pub fn secure_channel(&self) -> bool {
        self.sender != PartyRef::Server && self.receiver != PartyRef::Server
    }
}

/// Append-only delivery log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub(crate) fn push(&mut self, entry: TranscriptEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.len as u64).sum()
    }

    pub fn rounds(&self) -> u32 {
        self.entries.iter().map(|e| e.round).max().unwrap_or(0)
    }

    /// Digest over every entry's metadata and message digest.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = blake3::Hasher::new();
        for e in &self.entries {
            h.update(&e.round.to_le_bytes());
            h.update(&e.receiver.to_wire().to_le_bytes());
            h.update(&(e.len as u64).to_le_bytes());
            h.update(&e.digest);
        }
        *h.finalize().as_bytes()
    }

    /// Binary log: per entry round, receiver, length (u32 LE each), then the
    /// message bytes, or envelope plus digest when bytes were not captured.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.entries {
            w.write_all(&e.round.to_le_bytes())?;
            w.write_all(&e.receiver.to_wire().to_le_bytes())?;
            w.write_all(&(e.len as u32).to_le_bytes())?;
            match &e.bytes {
                Some(b) => w.write_all(b)?,
                None => {
                    let mut env = Vec::with_capacity(Envelope::BYTES);
                    Envelope {
                        kind: e.kind,
                        sender: e.sender,
                        run: e.run,
                        epoch: e.epoch,
                    }
                    .write_to(&mut env);
                    w.write_all(&env)?;
                    w.write_all(&e.digest)?;
                }
            }
        }
        Ok(())
    }
}
