use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;

use crate::envelope::{self, EnvelopeKind, RequestId};
use crate::leader::majority;
use crate::wire::{Instance, MsgType, PartitionId, PaxosMessage, Round, SwitchId};

use super::ReplicaError;

pub const DEFAULT_TRIM_THRESHOLD: f64 = 0.5;

/// A command released to the application, in instance order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeliveredCommand {
    pub pid: PartitionId,
    pub inst: Instance,
    /// Application payload (envelope stripped when present).
    pub value: Bytes,
    pub request: Option<RequestId>,
    pub multi_shard: Option<Vec<PartitionId>>,
    pub noop: bool,
}

impl DeliveredCommand {
    fn from_value(pid: PartitionId, inst: Instance, value: &Bytes) -> Self {
        match envelope::parse(value) {
            Some(EnvelopeKind::Command {
                request,
                shards,
                payload,
            }) => DeliveredCommand {
                pid,
                inst,
                value: payload,
                request: Some(request),
                multi_shard: shards,
                noop: false,
            },
            Some(EnvelopeKind::Noop) => DeliveredCommand {
                pid,
                inst,
                value: Bytes::new(),
                request: None,
                multi_shard: None,
                noop: true,
            },
            None => DeliveredCommand {
                pid,
                inst,
                value: value.clone(),
                request: None,
                multi_shard: None,
                noop: false,
            },
        }
    }
}

/// First quorum observed for an instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Decision {
    pub inst: Instance,
    pub rnd: Round,
    pub value: Bytes,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct PhaseTwoOutcome {
    pub decided: Option<Decision>,
    pub delivered: Vec<DeliveredCommand>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Votes {
    swids: BTreeSet<SwitchId>,
    value: Bytes,
}

/// Per-shard learner: counts PHASE2B votes, releases decided instances
/// gap-free in instance order, and decides when to trim the acceptors.
///
/// Decided values and vote tallies are retained until the next TRIM so that
/// a conflicting quorum for an already delivered instance is still caught.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReplicaPartition {
    pid: PartitionId,
    quorum: usize,
    capacity: u32,
    trim_at: u64,
    quorum_table: BTreeMap<(Instance, Round), Votes>,
    decided: BTreeMap<Instance, Bytes>,
    delivery_cursor: Instance,
    decided_count: u64,
    highest_decided: Option<Instance>,
    last_trim: Instance,
}

impl ReplicaPartition {
    /// `capacity` is the acceptors' per-partition ring size; TRIM fires once
    /// `trim_threshold * capacity` instances were decided since the last one.
    pub fn new(pid: PartitionId, acceptors: usize, capacity: u32, trim_threshold: f64) -> Self {
        let trim_at = if trim_threshold.is_finite() {
            ((trim_threshold * capacity as f64).ceil() as u64).max(1)
        } else {
            u64::MAX
        };
        ReplicaPartition {
            pid,
            quorum: majority(acceptors),
            capacity,
            trim_at,
            quorum_table: BTreeMap::new(),
            decided: BTreeMap::new(),
            delivery_cursor: 0,
            decided_count: 0,
            highest_decided: None,
            last_trim: 0,
        }
    }

    pub fn pid(&self) -> PartitionId {
        self.pid
    }

    pub fn delivery_cursor(&self) -> Instance {
        self.delivery_cursor
    }

    pub fn highest_decided(&self) -> Option<Instance> {
        self.highest_decided
    }

    pub fn decided_count(&self) -> u64 {
        self.decided_count
    }

    pub fn last_trim(&self) -> Instance {
        self.last_trim
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    /// Instances with retained tallies or values (bounded by trimming).
    pub fn retained(&self) -> usize {
        self.decided.len() + self.quorum_table.len()
    }

    /// The undecided instance blocking delivery, if a later one is decided.
    pub fn gap(&self) -> Option<Instance> {
        match self.highest_decided {
            Some(h) if h >= self.delivery_cursor => Some(self.delivery_cursor),
            _ => None,
        }
    }

    pub fn on_phase2b(&mut self, m: &PaxosMessage) -> Result<PhaseTwoOutcome, ReplicaError> {
        if m.msgtype != MsgType::Phase2b {
            return Err(ReplicaError::Unexpected(m.msgtype));
        }
        if m.pid != self.pid {
            return Err(ReplicaError::WrongPartition {
                expected: self.pid,
                got: m.pid,
            });
        }
        let mut out = PhaseTwoOutcome::default();
        if m.inst < self.last_trim {
            return Ok(out);
        }
        let votes = self
            .quorum_table
            .entry((m.inst, m.rnd))
            .or_insert_with(|| Votes {
                swids: BTreeSet::new(),
                value: m.value.clone(),
            });
        if votes.value != m.value {
            return Err(ReplicaError::SafetyViolation {
                pid: self.pid,
                inst: m.inst,
                first: votes.value.clone(),
                second: m.value.clone(),
            });
        }
        if !votes.swids.insert(m.swid) || votes.swids.len() != self.quorum {
            return Ok(out);
        }
        match self.decided.get(&m.inst) {
            Some(prev) if *prev != m.value => {
                return Err(ReplicaError::SafetyViolation {
                    pid: self.pid,
                    inst: m.inst,
                    first: prev.clone(),
                    second: m.value.clone(),
                })
            }
            Some(_) => {}
            None => {
                self.decided.insert(m.inst, m.value.clone());
                self.decided_count += 1;
                self.highest_decided = Some(self.highest_decided.map_or(m.inst, |h| h.max(m.inst)));
                out.decided = Some(Decision {
                    inst: m.inst,
                    rnd: m.rnd,
                    value: m.value.clone(),
                });
            }
        }
        while let Some(v) = self.decided.get(&self.delivery_cursor) {
            out.delivered.push(DeliveredCommand::from_value(
                self.pid,
                self.delivery_cursor,
                v,
            ));
            self.delivery_cursor += 1;
        }
        Ok(out)
    }

    /// TRIM up to the delivery cursor once enough instances were decided.
    pub fn maybe_trim(&mut self) -> Option<PaxosMessage> {
        if self.decided_count < self.trim_at || self.delivery_cursor <= self.last_trim {
            return None;
        }
        let upto = self.delivery_cursor;
        self.decided_count = 0;
        self.trim_to(upto);
        Some(PaxosMessage::trim(self.pid, upto))
    }

    /// Drops tallies and values below `upto`, which is clamped to the
    /// delivery cursor. Later votes for those instances are ignored.
    pub fn trim_to(&mut self, upto: Instance) {
        let upto = upto.min(self.delivery_cursor);
        if upto <= self.last_trim {
            return;
        }
        self.last_trim = upto;
        self.decided = self.decided.split_off(&upto);
        self.quorum_table = self.quorum_table.split_off(&(upto, 0));
    }
}
