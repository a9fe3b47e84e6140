//! Request envelope carried inside the consensus value.
//!
//! The proposer library wraps every application value so that replicas can
//! match responses to requests, recognise no-op fillers and find the shard
//! set of multi-shard requests:
//!
//! ```text
//! magic(1)=0xA7 | kind(1) | request_id(8) | nshards(1) | shards(2 * nshards) | payload
//! ```
//!
//! `nshards` is 0 for single-shard requests. All integers are big-endian.
//! Values that do not parse as an envelope are treated as opaque
//! single-shard payloads by every consumer.

use std::fmt;

use bytes::{BufMut, Bytes, BytesMut};
use serde::{Deserialize, Serialize};

use crate::wire::PartitionId;

pub const MAGIC: u8 = 0xA7;
const KIND_COMMAND: u8 = 0;
const KIND_NOOP: u8 = 1;
const FIXED_LEN: usize = 11;

/// Client-unique request identifier: 16-bit proposer id, 48-bit sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub u64);

impl RequestId {
    const SEQ_MASK: u64 = (1 << 48) - 1;

    pub fn new(proposer: u16, seq: u64) -> Self {
        RequestId(((proposer as u64) << 48) | (seq & Self::SEQ_MASK))
    }

    pub fn proposer(self) -> u16 {
        (self.0 >> 48) as u16
    }

    pub fn seq(self) -> u64 {
        self.0 & Self::SEQ_MASK
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.proposer(), self.seq())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EnvelopeKind {
    Command {
        request: RequestId,
        /// Involved partitions, sorted and deduplicated; `None` for single-shard.
        shards: Option<Vec<PartitionId>>,
        payload: Bytes,
    },
    /// Filler proposed for an instance that must be closed without a command.
    Noop,
}

pub fn encode_command(request: RequestId, shards: Option<&[PartitionId]>, payload: &[u8]) -> Bytes {
    let shards = shards.unwrap_or(&[]);
    let mut b = BytesMut::with_capacity(FIXED_LEN + 2 * shards.len() + payload.len());
    b.put_u8(MAGIC);
    b.put_u8(KIND_COMMAND);
    b.put_u64(request.0);
    b.put_u8(shards.len() as u8);
    for &s in shards {
        b.put_u16(s);
    }
    b.put_slice(payload);
    b.freeze()
}

pub fn noop() -> Bytes {
    let mut b = BytesMut::with_capacity(FIXED_LEN);
    b.put_u8(MAGIC);
    b.put_u8(KIND_NOOP);
    b.put_u64(0);
    b.put_u8(0);
    b.freeze()
}

pub fn is_noop(value: &[u8]) -> bool {
    matches!(parse(value), Some(EnvelopeKind::Noop))
}

/// Parses an envelope; `None` for opaque values.
pub fn parse(value: &[u8]) -> Option<EnvelopeKind> {
    if value.len() < FIXED_LEN || value[0] != MAGIC {
        return None;
    }
    let request = RequestId(u64::from_be_bytes(value[2..10].try_into().ok()?));
    let n = value[10] as usize;
    let body = FIXED_LEN + 2 * n;
    if value.len() < body {
        return None;
    }
    match value[1] {
        KIND_NOOP if n == 0 && value.len() == FIXED_LEN => Some(EnvelopeKind::Noop),
        KIND_COMMAND => {
            let shards = if n == 0 {
                None
            } else {
                let v: Vec<PartitionId> = value[FIXED_LEN..body]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]))
                    .collect();
                // Canonical form only: strictly ascending.
                if v.windows(2).any(|w| w[0] >= w[1]) {
                    return None;
                }
                Some(v)
            };
            Some(EnvelopeKind::Command {
                request,
                shards,
                payload: Bytes::copy_from_slice(&value[body..]),
            })
        }
        _ => None,
    }
}

/// Shard set of a multi-shard envelope, without copying the payload.
pub fn shard_set(value: &[u8]) -> Option<Vec<PartitionId>> {
    if value.len() < FIXED_LEN || value[0] != MAGIC || value[1] != KIND_COMMAND {
        return None;
    }
    match parse(value)? {
        EnvelopeKind::Command { shards, .. } => shards,
        EnvelopeKind::Noop => None,
    }
}
