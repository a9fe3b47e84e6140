//! Leader roles.
//!
//! The primary leader owns round 0 of every instance, so it skips Phase 1
//! and turns each REQUEST straight into a PHASE2A. A backup leader owns a
//! distinct non-zero round and runs classic Phase 1 for every instance it
//! proposes in, adopting the highest-round vote reported by a quorum.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;
use thiserror::Error;

use crate::action::{Action, Actions, Group};
use crate::envelope;
use crate::wire::{Instance, MsgType, PartitionId, PaxosMessage, Round, SwitchId};

pub const DEFAULT_PENDING_CAPACITY: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Primary,
    Backup,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LeaderError {
    #[error("partition {pid} out of range (partitions = {partitions})")]
    InvalidPartition { pid: PartitionId, partitions: u16 },
    #[error("stale round {got} for pid {pid} inst {inst}, expected {expected}")]
    StaleRound {
        pid: PartitionId,
        inst: Instance,
        got: Round,
        expected: Round,
    },
    #[error("no pending Phase 1 for pid {pid} inst {inst}")]
    UnknownInstance { pid: PartitionId, inst: Instance },
    #[error("{role:?} leader does not handle {msgtype}")]
    Unexpected { role: Role, msgtype: MsgType },
    #[error("backup pending table full ({capacity} in-flight instances)")]
    Backpressure { capacity: usize },
    #[error("empty values cannot be proposed")]
    EmptyValue,
    #[error("instance space exhausted for partition {0}")]
    InstancesExhausted(PartitionId),
    #[error("round space exhausted")]
    RoundsExhausted,
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

/// Phase-1 bookkeeping for one (pid, inst) a backup is proposing in.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct PendingInstance {
    rnd: Round,
    promises: BTreeSet<SwitchId>,
    /// Highest-round vote reported so far.
    highest: Option<(Round, Bytes)>,
    client_value: Bytes,
    proposed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Leader {
    swid: SwitchId,
    role: Role,
    reserved_rnd: Round,
    inst_counter: Vec<Instance>,
    quorum: usize,
    pending: BTreeMap<(PartitionId, Instance), PendingInstance>,
    pending_capacity: usize,
    /// Next round handed out by `recover`; advances by `round_stride`.
    recovery_rnd: Round,
    round_stride: Round,
}

pub fn majority(acceptors: usize) -> usize {
    acceptors / 2 + 1
}

impl Leader {
    pub fn primary(swid: SwitchId, partitions: u16) -> Self {
        Leader {
            swid,
            role: Role::Primary,
            reserved_rnd: 0,
            inst_counter: vec![0; partitions as usize],
            quorum: 0,
            pending: BTreeMap::new(),
            pending_capacity: 0,
            recovery_rnd: 0,
            round_stride: 0,
        }
    }

    /// A backup proposing with `reserved_rnd`. `round_stride` must be at least
    /// the number of leaders sharing the acceptors so that rounds handed out
    /// for recovery (`reserved_rnd + k * round_stride`) stay unique per leader.
    pub fn backup(
        swid: SwitchId,
        partitions: u16,
        reserved_rnd: Round,
        acceptors: usize,
        round_stride: Round,
    ) -> Result<Self, LeaderError> {
        if reserved_rnd == 0 {
            return Err(LeaderError::Config("backup leader needs a non-zero round"));
        }
        if acceptors == 0 {
            return Err(LeaderError::Config("no acceptors"));
        }
        if round_stride <= reserved_rnd {
            return Err(LeaderError::Config(
                "round stride must exceed the reserved round",
            ));
        }
        Ok(Leader {
            swid,
            role: Role::Backup,
            reserved_rnd,
            inst_counter: vec![0; partitions as usize],
            quorum: majority(acceptors),
            pending: BTreeMap::new(),
            pending_capacity: DEFAULT_PENDING_CAPACITY,
            recovery_rnd: reserved_rnd,
            round_stride,
        })
    }

    pub fn with_pending_capacity(mut self, capacity: usize) -> Self {
        self.pending_capacity = capacity;
        self
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn swid(&self) -> SwitchId {
        self.swid
    }

    pub fn reserved_rnd(&self) -> Round {
        self.reserved_rnd
    }

    pub fn partitions(&self) -> u16 {
        self.inst_counter.len() as u16
    }

    pub fn next_instance(&self, pid: PartitionId) -> Option<Instance> {
        self.inst_counter.get(pid as usize).copied()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Dispatches on message type and role.
    pub fn handle(&mut self, m: &PaxosMessage) -> Result<Actions, LeaderError> {
        match (self.role, m.msgtype) {
            (Role::Primary, MsgType::Request) => self.primary_on_request(m),
            (Role::Backup, MsgType::Request) => self.backup_on_request(m),
            (Role::Backup, MsgType::Phase1b) => self.backup_on_phase1b(m),
            (_, MsgType::Trim) => {
                self.on_trim(m);
                Ok(Actions::new())
            }
            (role, msgtype) => Err(LeaderError::Unexpected { role, msgtype }),
        }
    }

    /// Partitions a REQUEST is ordered in: its shard set for multi-shard
    /// envelopes, the header pid otherwise.
    fn target_partitions(&self, m: &PaxosMessage) -> Result<Vec<PartitionId>, LeaderError> {
        if m.value.is_empty() {
            return Err(LeaderError::EmptyValue);
        }
        let pids = envelope::shard_set(&m.value).unwrap_or_else(|| vec![m.pid]);
        let partitions = self.partitions();
        if let Some(&pid) = pids.iter().find(|&&p| p >= partitions) {
            return Err(LeaderError::InvalidPartition { pid, partitions });
        }
        for &pid in &pids {
            if self.inst_counter[pid as usize] == Instance::MAX {
                return Err(LeaderError::InstancesExhausted(pid));
            }
        }
        Ok(pids)
    }

    fn allocate(&mut self, pid: PartitionId) -> Instance {
        let slot = &mut self.inst_counter[pid as usize];
        let inst = *slot;
        *slot += 1;
        inst
    }

    /// Round-0 fast path. Multi-shard requests get an instance in every
    /// involved partition within this one step, which keeps their relative
    /// order identical across shards.
    pub fn primary_on_request(&mut self, m: &PaxosMessage) -> Result<Actions, LeaderError> {
        if self.role != Role::Primary {
            return Err(LeaderError::Unexpected {
                role: self.role,
                msgtype: m.msgtype,
            });
        }
        let pids = self.target_partitions(m)?;
        Ok(pids
            .into_iter()
            .map(|pid| {
                let inst = self.allocate(pid);
                let msg = PaxosMessage {
                    msgtype: MsgType::Phase2a,
                    inst,
                    rnd: 0,
                    vrnd: 0,
                    swid: self.swid,
                    pid,
                    value: m.value.clone(),
                };
                Action::multicast(msg, Group::Acceptors)
            })
            .collect())
    }

    fn phase1a(&self, pid: PartitionId, inst: Instance, rnd: Round) -> Action {
        let msg = PaxosMessage {
            msgtype: MsgType::Phase1a,
            inst,
            rnd,
            vrnd: 0,
            swid: self.swid,
            pid,
            value: Bytes::new(),
        };
        Action::multicast(msg, Group::Acceptors)
    }

    pub fn backup_on_request(&mut self, m: &PaxosMessage) -> Result<Actions, LeaderError> {
        if self.role != Role::Backup {
            return Err(LeaderError::Unexpected {
                role: self.role,
                msgtype: m.msgtype,
            });
        }
        let pids = self.target_partitions(m)?;
        if self.pending.len() + pids.len() > self.pending_capacity {
            return Err(LeaderError::Backpressure {
                capacity: self.pending_capacity,
            });
        }
        let mut out = Actions::with_capacity(pids.len());
        for pid in pids {
            let inst = self.allocate(pid);
            self.pending.insert(
                (pid, inst),
                PendingInstance {
                    rnd: self.reserved_rnd,
                    promises: BTreeSet::new(),
                    highest: None,
                    client_value: m.value.clone(),
                    proposed: false,
                },
            );
            out.push(self.phase1a(pid, inst, self.reserved_rnd));
        }
        Ok(out)
    }

    pub fn backup_on_phase1b(&mut self, m: &PaxosMessage) -> Result<Actions, LeaderError> {
        let key = (m.pid, m.inst);
        let quorum = self.quorum;
        let entry = self
            .pending
            .get_mut(&key)
            .ok_or(LeaderError::UnknownInstance {
                pid: m.pid,
                inst: m.inst,
            })?;
        if m.rnd != entry.rnd {
            return Err(LeaderError::StaleRound {
                pid: m.pid,
                inst: m.inst,
                got: m.rnd,
                expected: entry.rnd,
            });
        }
        if entry.proposed {
            return Ok(Actions::new());
        }
        entry.promises.insert(m.swid);
        // A non-empty value is a vote; proposals are never empty.
        if !m.value.is_empty() {
            match &entry.highest {
                Some((vrnd, value)) if *vrnd == m.vrnd => assert_eq!(
                    value, &m.value,
                    "two votes at round {vrnd} for pid {} inst {} carry different values",
                    m.pid, m.inst
                ),
                Some((vrnd, _)) if *vrnd > m.vrnd => {}
                _ => entry.highest = Some((m.vrnd, m.value.clone())),
            }
        }
        if entry.promises.len() < quorum {
            return Ok(Actions::new());
        }
        entry.proposed = true;
        let value = match &entry.highest {
            Some((_, v)) => v.clone(),
            None => entry.client_value.clone(),
        };
        let msg = PaxosMessage {
            msgtype: MsgType::Phase2a,
            inst: m.inst,
            rnd: entry.rnd,
            vrnd: 0,
            swid: self.swid,
            pid: m.pid,
            value,
        };
        Ok(vec![Action::multicast(msg, Group::Acceptors)])
    }

    /// Raises each partition's counter past the highest instance known
    /// decided, and forgets Phase-1 state at or below it.
    pub fn sync(&mut self, decided: &BTreeMap<PartitionId, Instance>) {
        for (&pid, &inst) in decided {
            if let Some(c) = self.inst_counter.get_mut(pid as usize) {
                *c = (*c).max(inst.saturating_add(1));
            }
        }
        self.pending
            .retain(|(pid, inst), _| decided.get(pid).is_none_or(|&d| *inst > d));
    }

    /// Forgets Phase-1 state for instances of `m.pid` below the watermark.
    pub fn on_trim(&mut self, m: &PaxosMessage) {
        self.pending
            .retain(|(pid, inst), _| *pid != m.pid || *inst >= m.inst);
    }

    /// Restarts Phase 1 for an instance a replica cannot make progress past,
    /// using a round this leader has not used before. The instance ends up
    /// holding any value that may already have been chosen there, or a no-op.
    pub fn recover(&mut self, pid: PartitionId, inst: Instance) -> Result<Actions, LeaderError> {
        if self.role != Role::Backup {
            return Err(LeaderError::Config("only a backup leader runs Phase 1"));
        }
        let partitions = self.partitions();
        if pid >= partitions {
            return Err(LeaderError::InvalidPartition { pid, partitions });
        }
        let rnd = self
            .recovery_rnd
            .checked_add(self.round_stride)
            .ok_or(LeaderError::RoundsExhausted)?;
        self.recovery_rnd = rnd;
        let client_value = match self.pending.remove(&(pid, inst)) {
            Some(p) => p.client_value,
            None => {
                if self.pending.len() >= self.pending_capacity {
                    return Err(LeaderError::Backpressure {
                        capacity: self.pending_capacity,
                    });
                }
                envelope::noop()
            }
        };
        self.pending.insert(
            (pid, inst),
            PendingInstance {
                rnd,
                promises: BTreeSet::new(),
                highest: None,
                client_value,
                proposed: false,
            },
        );
        let c = &mut self.inst_counter[pid as usize];
        *c = (*c).max(inst.saturating_add(1));
        Ok(vec![self.phase1a(pid, inst, rnd)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Dispatch;

    fn req(pid: PartitionId, v: &'static [u8]) -> PaxosMessage {
        PaxosMessage::request(pid, Bytes::from_static(v))
    }

    fn p1b(
        swid: SwitchId,
        inst: Instance,
        rnd: Round,
        vote: Option<(Round, &'static [u8])>,
    ) -> PaxosMessage {
        let (vrnd, value) = vote.map_or((0, Bytes::new()), |(r, v)| (r, Bytes::from_static(v)));
        PaxosMessage {
            msgtype: MsgType::Phase1b,
            inst,
            rnd,
            vrnd,
            swid,
            pid: 0,
            value,
        }
    }

    #[test]
    fn primary_first_request() {
        let mut l = Leader::primary(1, 4);
        let out = l.handle(&req(3, b"v")).unwrap();
        assert_eq!(out.len(), 1);
        let a = &out[0];
        assert_eq!(a.dispatch, Dispatch::Multicast(Group::Acceptors));
        assert_eq!(a.msg.msgtype, MsgType::Phase2a);
        assert_eq!((a.msg.inst, a.msg.rnd, a.msg.pid), (0, 0, 3));
        assert_eq!(&a.msg.value[..], b"v");
        assert_eq!(l.next_instance(3), Some(1));
    }

    #[test]
    fn primary_counters_are_per_partition() {
        // Oracle: independent per-partition counters.
        let mut l = Leader::primary(1, 2);
        let mut oracle = [0u32; 2];
        for pid in [0, 0, 1, 0, 1, 1, 0] {
            let out = l.handle(&req(pid, b"x")).unwrap();
            assert_eq!(out[0].msg.inst, oracle[pid as usize]);
            oracle[pid as usize] += 1;
        }
    }

    #[test]
    fn primary_rejects_out_of_range_partition() {
        let mut l = Leader::primary(1, 4);
        assert_eq!(
            l.handle(&req(4, b"v")),
            Err(LeaderError::InvalidPartition {
                pid: 4,
                partitions: 4
            })
        );
        assert_eq!(l.inst_counter, vec![0; 4]);
    }

    #[test]
    fn primary_drops_phase1b() {
        let mut l = Leader::primary(1, 1);
        assert!(matches!(
            l.handle(&p1b(5, 0, 0, None)),
            Err(LeaderError::Unexpected { .. })
        ));
    }

    #[test]
    fn multi_shard_request_gets_an_instance_per_shard() {
        let mut l = Leader::primary(1, 4);
        l.handle(&req(2, b"a")).unwrap();
        let v = envelope::encode_command(envelope::RequestId(9), Some(&[1, 2]), b"x");
        let out = l.handle(&PaxosMessage::request(1, v)).unwrap();
        let got: Vec<_> = out.iter().map(|a| (a.msg.pid, a.msg.inst)).collect();
        assert_eq!(got, vec![(1, 0), (2, 1)]);
    }

    #[test]
    fn backup_needs_nonzero_round() {
        assert!(matches!(
            Leader::backup(2, 1, 0, 3, 2),
            Err(LeaderError::Config(_))
        ));
    }

    #[test]
    fn backup_request_starts_phase1() {
        let mut l = Leader::backup(2, 1, 1, 3, 2).unwrap();
        l.sync(&BTreeMap::from([(0, 6)]));
        let out = l.handle(&req(0, b"v")).unwrap();
        assert_eq!(out.len(), 1);
        let m = &out[0].msg;
        assert_eq!(m.msgtype, MsgType::Phase1a);
        assert_eq!((m.inst, m.rnd, m.pid, m.swid), (7, 1, 0, 2));
        assert_eq!(out[0].dispatch, Dispatch::Multicast(Group::Acceptors));
    }

    #[test]
    fn backup_free_choice_without_votes() {
        let mut l = Leader::backup(2, 1, 1, 3, 2).unwrap();
        l.handle(&req(0, b"client")).unwrap();
        assert!(l.handle(&p1b(10, 0, 1, None)).unwrap().is_empty());
        let out = l.handle(&p1b(11, 0, 1, None)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].msg.msgtype, MsgType::Phase2a);
        assert_eq!(out[0].msg.rnd, 1);
        assert_eq!(&out[0].msg.value[..], b"client");
        // Quorum already reached.
        assert!(l.handle(&p1b(12, 0, 1, None)).unwrap().is_empty());
    }

    #[test]
    fn backup_adopts_highest_vote() {
        let mut l = Leader::backup(2, 1, 3, 3, 4).unwrap();
        l.handle(&req(0, b"client")).unwrap();
        l.handle(&p1b(10, 0, 3, None)).unwrap();
        let out = l.handle(&p1b(11, 0, 3, Some((1, b"w")))).unwrap();
        assert_eq!(&out[0].msg.value[..], b"w");
    }

    #[test]
    fn backup_adopts_round_zero_vote() {
        let mut l = Leader::backup(2, 1, 1, 3, 2).unwrap();
        l.handle(&req(0, b"client")).unwrap();
        l.handle(&p1b(10, 0, 1, Some((0, b"v0")))).unwrap();
        let out = l.handle(&p1b(11, 0, 1, None)).unwrap();
        assert_eq!(&out[0].msg.value[..], b"v0");
    }

    #[test]
    fn backup_prefers_higher_vote_over_lower() {
        let mut l = Leader::backup(2, 1, 5, 5, 6).unwrap();
        l.handle(&req(0, b"client")).unwrap();
        l.handle(&p1b(10, 0, 5, Some((3, b"hi")))).unwrap();
        l.handle(&p1b(11, 0, 5, Some((0, b"lo")))).unwrap();
        let out = l.handle(&p1b(12, 0, 5, Some((3, b"hi")))).unwrap();
        assert_eq!(&out[0].msg.value[..], b"hi");
    }

    #[test]
    #[should_panic(expected = "different values")]
    fn conflicting_votes_at_same_round_panic() {
        let mut l = Leader::backup(2, 1, 5, 5, 6).unwrap();
        l.handle(&req(0, b"client")).unwrap();
        l.handle(&p1b(10, 0, 5, Some((3, b"a")))).unwrap();
        l.handle(&p1b(11, 0, 5, Some((3, b"b")))).unwrap();
    }

    #[test]
    fn backup_tracks_pending_instances_independently() {
        let mut l = Leader::backup(2, 1, 1, 3, 2).unwrap();
        l.handle(&req(0, b"a")).unwrap();
        l.handle(&req(0, b"b")).unwrap();
        l.handle(&p1b(10, 1, 1, None)).unwrap();
        l.handle(&p1b(10, 0, 1, None)).unwrap();
        let second = l.handle(&p1b(11, 1, 1, None)).unwrap();
        assert_eq!(
            (second[0].msg.inst, &second[0].msg.value[..]),
            (1, &b"b"[..])
        );
        let first = l.handle(&p1b(11, 0, 1, None)).unwrap();
        assert_eq!((first[0].msg.inst, &first[0].msg.value[..]), (0, &b"a"[..]));
    }

    #[test]
    fn backup_rejects_stale_and_unknown() {
        let mut l = Leader::backup(2, 1, 1, 3, 2).unwrap();
        l.handle(&req(0, b"a")).unwrap();
        assert!(matches!(
            l.handle(&p1b(10, 0, 2, None)),
            Err(LeaderError::StaleRound { .. })
        ));
        assert!(matches!(
            l.handle(&p1b(10, 9, 1, None)),
            Err(LeaderError::UnknownInstance { .. })
        ));
    }

    #[test]
    fn sync_takes_max() {
        let mut l = Leader::backup(2, 1, 1, 3, 2).unwrap();
        l.sync(&BTreeMap::from([(0, 41)]));
        assert_eq!(l.next_instance(0), Some(42));
        l.inst_counter[0] = 10;
        l.sync(&BTreeMap::from([(0, 5)]));
        assert_eq!(l.next_instance(0), Some(10));
    }

    #[test]
    fn backpressure_when_pending_full() {
        let mut l = Leader::backup(2, 1, 1, 3, 2)
            .unwrap()
            .with_pending_capacity(1);
        l.handle(&req(0, b"a")).unwrap();
        assert!(matches!(
            l.handle(&req(0, b"b")),
            Err(LeaderError::Backpressure { capacity: 1 })
        ));
        assert_eq!(l.next_instance(0), Some(1));
    }

    #[test]
    fn recover_uses_fresh_rounds() {
        let mut l = Leader::backup(2, 1, 1, 3, 2).unwrap();
        let a = l.recover(0, 4).unwrap();
        let b = l.recover(0, 4).unwrap();
        assert_eq!(a[0].msg.rnd, 3);
        assert_eq!(b[0].msg.rnd, 5);
        assert_eq!(l.next_instance(0), Some(5));
        // Nothing was voted: the instance is closed with a no-op.
        l.handle(&p1b(10, 4, 5, None)).unwrap();
        let out = l.handle(&p1b(11, 4, 5, None)).unwrap();
        assert!(envelope::is_noop(&out[0].msg.value));
    }

    #[test]
    fn empty_value_is_rejected() {
        let mut l = Leader::primary(1, 1);
        assert_eq!(l.handle(&req(0, b"")), Err(LeaderError::EmptyValue));
    }

    #[test]
    fn trim_forgets_pending_below_watermark() {
        let mut l = Leader::backup(2, 2, 1, 3, 2).unwrap();
        for _ in 0..3 {
            l.handle(&req(0, b"a")).unwrap();
        }
        l.handle(&req(1, b"b")).unwrap();
        assert_eq!(l.pending_len(), 4);
        l.handle(&PaxosMessage::trim(0, 2)).unwrap();
        assert_eq!(l.pending_len(), 2);
        assert_eq!(
            Leader::primary(1, 1).handle(&PaxosMessage::trim(0, 9)),
            Ok(vec![])
        );
    }
}
