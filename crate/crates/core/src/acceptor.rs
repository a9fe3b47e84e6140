//! Acceptor over P per-partition ring-buffer logs.
//!
//! Each partition owns a ring of `capacity` cells. The cell for `inst` is
//! `inst % capacity`, and only instances in
//! `[low_watermark, low_watermark + capacity)` are accepted, so a cell is
//! never reused before a TRIM has cleared it.

use bytes::Bytes;
use thiserror::Error;

use crate::action::{Action, Actions, Group};
use crate::wire::{Instance, MsgType, PartitionId, PaxosMessage, Round, SwitchId};

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct LogEntry {
    /// Highest round promised or voted in.
    pub rnd: Round,
    /// Round of the vote cast; meaningful only when `value` is non-empty.
    pub vrnd: Round,
    /// Voted value; empty when no vote has been cast.
    pub value: Bytes,
    pub occupied: bool,
}

impl LogEntry {
    pub fn voted(&self) -> bool {
        !self.value.is_empty()
    }
}

/// Deliberately broken acceptor behaviours, used to check that the
/// schedule explorer notices safety and liveness bugs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    #[default]
    Correct,
    /// PHASE1A is answered but the promise is never recorded.
    NoPromise,
    /// PHASE2A is accepted only at rounds strictly above the promise.
    StrictPhase2a,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AcceptorError {
    #[error("partition {pid} out of range (partitions = {partitions})")]
    InvalidPartition { pid: PartitionId, partitions: u16 },
    #[error("pid {pid} inst {inst} outside window [{low}, {low} + {capacity})")]
    OutOfWindow {
        pid: PartitionId,
        inst: Instance,
        low: Instance,
        capacity: u32,
    },
    #[error("{0} is not addressed to acceptors")]
    Unexpected(MsgType),
    #[error("PHASE2A with an empty value")]
    EmptyValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AcceptorLog {
    swid: SwitchId,
    capacity: u32,
    rings: Vec<Vec<LogEntry>>,
    low_watermark: Vec<Instance>,
    occupied: Vec<u32>,
    peak_occupied: Vec<u32>,
    variant: Variant,
}

impl AcceptorLog {
    /// `partitions` rings of `capacity` cells each.
    pub fn new(swid: SwitchId, partitions: u16, capacity: u32) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        let p = partitions as usize;
        AcceptorLog {
            swid,
            capacity,
            rings: vec![vec![LogEntry::default(); capacity as usize]; p],
            low_watermark: vec![0; p],
            occupied: vec![0; p],
            peak_occupied: vec![0; p],
            variant: Variant::Correct,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn swid(&self) -> SwitchId {
        self.swid
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn partitions(&self) -> u16 {
        self.rings.len() as u16
    }

    pub fn low_watermark(&self, pid: PartitionId) -> Instance {
        self.low_watermark[pid as usize]
    }

    pub fn occupied(&self, pid: PartitionId) -> u32 {
        self.occupied[pid as usize]
    }

    /// Largest number of simultaneously occupied cells seen in a partition.
    pub fn peak_occupied(&self, pid: PartitionId) -> u32 {
        self.peak_occupied[pid as usize]
    }

    /// Total cells allocated, always partitions * capacity.
    pub fn cells(&self) -> usize {
        self.rings.iter().map(Vec::len).sum()
    }

    /// The entry for (pid, inst) if it lies inside the window.
    pub fn entry(&self, pid: PartitionId, inst: Instance) -> Option<&LogEntry> {
        self.slot(pid, inst)
            .ok()
            .map(|i| &self.rings[pid as usize][i])
    }

    fn slot(&self, pid: PartitionId, inst: Instance) -> Result<usize, AcceptorError> {
        let partitions = self.partitions();
        if pid >= partitions {
            return Err(AcceptorError::InvalidPartition { pid, partitions });
        }
        let low = self.low_watermark[pid as usize];
        if inst < low || (inst - low) >= self.capacity {
            return Err(AcceptorError::OutOfWindow {
                pid,
                inst,
                low,
                capacity: self.capacity,
            });
        }
        Ok((inst % self.capacity) as usize)
    }

    fn touch(&mut self, pid: PartitionId, cell: usize) -> &mut LogEntry {
        let p = pid as usize;
        if !self.rings[p][cell].occupied {
            self.rings[p][cell].occupied = true;
            self.occupied[p] += 1;
            self.peak_occupied[p] = self.peak_occupied[p].max(self.occupied[p]);
        }
        &mut self.rings[p][cell]
    }

    pub fn handle(&mut self, m: &PaxosMessage) -> Result<Actions, AcceptorError> {
        match m.msgtype {
            MsgType::Phase1a => self.on_phase1a(m),
            MsgType::Phase2a => self.on_phase2a(m),
            MsgType::Trim => {
                self.on_trim(m)?;
                Ok(Actions::new())
            }
            t => Err(AcceptorError::Unexpected(t)),
        }
    }

    /// Promise `m.rnd` if it beats the stored round and report any vote.
    pub fn on_phase1a(&mut self, m: &PaxosMessage) -> Result<Actions, AcceptorError> {
        let cell = self.slot(m.pid, m.inst)?;
        let swid = self.swid;
        let variant = self.variant;
        let e = &self.rings[m.pid as usize][cell];
        if variant != Variant::NoPromise && m.rnd <= e.rnd {
            return Ok(Actions::new());
        }
        let reply = if variant == Variant::NoPromise {
            e.clone()
        } else {
            let e = self.touch(m.pid, cell);
            e.rnd = m.rnd;
            e.clone()
        };
        let msg = PaxosMessage {
            msgtype: MsgType::Phase1b,
            inst: m.inst,
            rnd: m.rnd,
            vrnd: if reply.voted() { reply.vrnd } else { 0 },
            swid,
            pid: m.pid,
            value: reply.value,
        };
        Ok(vec![Action::forward(msg, m.swid)])
    }

    /// Vote for `m.value` at `m.rnd` unless a higher round was promised.
    pub fn on_phase2a(&mut self, m: &PaxosMessage) -> Result<Actions, AcceptorError> {
        let cell = self.slot(m.pid, m.inst)?;
        if m.value.is_empty() {
            return Err(AcceptorError::EmptyValue);
        }
        let e = &self.rings[m.pid as usize][cell];
        let accept = match self.variant {
            Variant::StrictPhase2a => m.rnd > e.rnd,
            _ => m.rnd >= e.rnd,
        };
        if !accept {
            return Ok(Actions::new());
        }
        let swid = self.swid;
        let e = self.touch(m.pid, cell);
        e.rnd = m.rnd;
        e.vrnd = m.rnd;
        e.value = m.value.clone();
        let msg = PaxosMessage {
            msgtype: MsgType::Phase2b,
            inst: m.inst,
            rnd: m.rnd,
            vrnd: m.rnd,
            swid,
            pid: m.pid,
            value: m.value.clone(),
        };
        Ok(vec![Action::multicast(msg, Group::Replicas)])
    }

    /// Forget every instance below `m.inst` in partition `m.pid`.
    pub fn on_trim(&mut self, m: &PaxosMessage) -> Result<(), AcceptorError> {
        let partitions = self.partitions();
        if m.pid >= partitions {
            return Err(AcceptorError::InvalidPartition {
                pid: m.pid,
                partitions,
            });
        }
        let p = m.pid as usize;
        let low = self.low_watermark[p];
        if m.inst <= low {
            return Ok(());
        }
        let span = (m.inst - low).min(self.capacity);
        for k in 0..span {
            let cell = ((low + k) % self.capacity) as usize;
            let e = &mut self.rings[p][cell];
            if e.occupied {
                self.occupied[p] -= 1;
            }
            *e = LogEntry::default();
        }
        self.low_watermark[p] = m.inst;
        Ok(())
    }
}
