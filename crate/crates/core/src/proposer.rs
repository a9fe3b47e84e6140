//! Client-side proposer library.
//!
//! Applications hand over a value and a shard-selection key; the library
//! picks the partition, wraps the value in a request envelope, and keeps the
//! request pending until a response arrives, resending on timeout and asking
//! for a leader change after `max_retries` consecutive resends.
//!
//! The library is sans-IO: callers send the returned messages and drive
//! timeouts with their own clock.

use std::collections::BTreeMap;
use std::time::Duration;

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::{self, RequestId};
use crate::wire::{PartitionId, PaxosMessage, MAX_VALUE_LEN};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProposerError {
    #[error("value of {len} bytes does not fit in a message once wrapped")]
    ValueTooLarge { len: usize },
    #[error("key {key} outside key range {range}")]
    KeyOutOfRange { key: u64, range: u64 },
    #[error("invalid shard set {0:?}")]
    InvalidShards(Vec<PartitionId>),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

/// Even split of `[0, key_range)` over `partitions` shards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySpace {
    pub partitions: u16,
    pub key_range: u64,
}

impl KeySpace {
    pub fn new(partitions: u16, key_range: u64) -> Result<Self, ProposerError> {
        if partitions == 0 {
            return Err(ProposerError::Config("at least one partition"));
        }
        if key_range == 0 {
            return Err(ProposerError::Config("empty key range"));
        }
        Ok(KeySpace {
            partitions,
            key_range,
        })
    }

    /// `floor(key * partitions / key_range)`.
    pub fn map_key(&self, key: u64) -> Result<PartitionId, ProposerError> {
        if key >= self.key_range {
            return Err(ProposerError::KeyOutOfRange {
                key,
                range: self.key_range,
            });
        }
        Ok((key as u128 * self.partitions as u128 / self.key_range as u128) as PartitionId)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposerConfig {
    pub partitions: u16,
    #[serde(with = "duration_us")]
    pub retry_timeout: Duration,
    pub max_retries: u32,
    pub key_range: u64,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        ProposerConfig {
            partitions: 1,
            retry_timeout: Duration::from_millis(10),
            max_retries: 3,
            key_range: 1 << 32,
        }
    }
}

/// Serde helper: durations as integer microseconds.
pub mod duration_us {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_micros() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_micros(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingRequest {
    pub id: RequestId,
    pub request: PaxosMessage,
    pub pid: PartitionId,
    /// Consecutive resends since submission or the last leader-change request.
    pub retries: u32,
    pub submitted: Duration,
    pub last_sent: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimeoutAction {
    Resend(PaxosMessage),
    /// Ask the controller to move the leader address, then resend.
    RequestLeaderChange {
        resend: PaxosMessage,
        retries: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub id: RequestId,
    pub response: Bytes,
    pub latency: Duration,
}

#[derive(Debug, Clone)]
pub struct Proposer {
    id: u16,
    config: ProposerConfig,
    keys: KeySpace,
    next_seq: u64,
    pending: BTreeMap<RequestId, PendingRequest>,
}

impl Proposer {
    pub fn new(id: u16, config: ProposerConfig) -> Result<Self, ProposerError> {
        if config.max_retries == 0 {
            return Err(ProposerError::Config("max_retries must be at least 1"));
        }
        let keys = KeySpace::new(config.partitions, config.key_range)?;
        Ok(Proposer {
            id,
            config,
            keys,
            next_seq: 0,
            pending: BTreeMap::new(),
        })
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn config(&self) -> &ProposerConfig {
        &self.config
    }

    pub fn key_space(&self) -> KeySpace {
        self.keys
    }

    pub fn map_key(&self, key: u64) -> Result<PartitionId, ProposerError> {
        self.keys.map_key(key)
    }

    pub fn pending(&self, id: RequestId) -> Option<&PendingRequest> {
        self.pending.get(&id)
    }

    pub fn outstanding(&self) -> usize {
        self.pending.len()
    }

    /// When the request next times out.
    pub fn deadline(&self, id: RequestId) -> Option<Duration> {
        self.pending
            .get(&id)
            .map(|p| p.last_sent + self.config.retry_timeout)
    }

    /// Wraps `value` for the partition owning `key` and returns the REQUEST to
    /// send toward the leader address.
    pub fn submit(
        &mut self,
        value: &[u8],
        key: u64,
        now: Duration,
    ) -> Result<(RequestId, PaxosMessage), ProposerError> {
        let pid = self.keys.map_key(key)?;
        self.register(value, pid, None, now)
    }

    /// Multi-shard submission; `shards` is the caller-supplied (super)set of
    /// partitions the request touches.
    pub fn submit_multi(
        &mut self,
        value: &[u8],
        shards: &[PartitionId],
        now: Duration,
    ) -> Result<(RequestId, PaxosMessage), ProposerError> {
        let mut set = shards.to_vec();
        set.sort_unstable();
        set.dedup();
        if set.is_empty()
            || set.len() > u8::MAX as usize
            || set.iter().any(|&p| p >= self.keys.partitions)
        {
            return Err(ProposerError::InvalidShards(shards.to_vec()));
        }
        if set.len() == 1 {
            return self.register(value, set[0], None, now);
        }
        self.register(value, set[0], Some(&set), now)
    }

    fn register(
        &mut self,
        value: &[u8],
        pid: PartitionId,
        shards: Option<&[PartitionId]>,
        now: Duration,
    ) -> Result<(RequestId, PaxosMessage), ProposerError> {
        let id = RequestId::new(self.id, self.next_seq);
        let wrapped = envelope::encode_command(id, shards, value);
        if wrapped.len() > MAX_VALUE_LEN {
            return Err(ProposerError::ValueTooLarge { len: value.len() });
        }
        self.next_seq += 1;
        let request = PaxosMessage::request(pid, wrapped);
        self.pending.insert(
            id,
            PendingRequest {
                id,
                request: request.clone(),
                pid,
                retries: 0,
                submitted: now,
                last_sent: now,
            },
        );
        Ok((id, request))
    }

    /// Resend, or after `max_retries` consecutive resends request a leader
    /// change (and resend). `None` if the request already completed.
    pub fn on_timeout(&mut self, id: RequestId, now: Duration) -> Option<TimeoutAction> {
        let max = self.config.max_retries;
        let p = self.pending.get_mut(&id)?;
        p.last_sent = now;
        if p.retries < max {
            p.retries += 1;
            Some(TimeoutAction::Resend(p.request.clone()))
        } else {
            let retries = p.retries;
            p.retries = 0;
            Some(TimeoutAction::RequestLeaderChange {
                resend: p.request.clone(),
                retries,
            })
        }
    }

    pub fn on_response(
        &mut self,
        id: RequestId,
        response: Bytes,
        now: Duration,
    ) -> Option<Completion> {
        let p = self.pending.remove(&id)?;
        Some(Completion {
            id,
            response,
            latency: now.saturating_sub(p.submitted),
        })
    }
}
