//! Timestamped event records shared by the simulator, the trace validators
//! and the metrics code. Serialized as one JSON object per line; consensus
//! messages appear as the hex of their wire encoding.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use bytes::Bytes;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::envelope::RequestId;
use crate::wire::{self, Instance, PartitionId, PaxosMessage, Round};

pub type DeviceId = u16;

/// Serde adapter: a consensus message as hex-encoded wire bytes.
pub mod wire_hex {
    use super::*;

    pub fn serialize<S: Serializer>(m: &PaxosMessage, s: S) -> Result<S::Ok, S::Error> {
        let b = wire::encode_message(m).map_err(serde::ser::Error::custom)?;
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<PaxosMessage, D::Error> {
        let s = String::deserialize(d)?;
        let raw = hex::decode(s).map_err(serde::de::Error::custom)?;
        wire::decode_message(&raw).map_err(serde::de::Error::custom)
    }
}

pub mod bytes_hex {
    use super::*;

    pub fn serialize<S: Serializer>(b: &Bytes, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Bytes, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s)
            .map(Bytes::from)
            .map_err(serde::de::Error::custom)
    }
}

/// What travels over a simulated link.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Packet {
    Paxos {
        #[serde(with = "wire_hex")]
        msg: PaxosMessage,
    },
    /// Replica to proposer.
    Response {
        request: RequestId,
        #[serde(with = "bytes_hex")]
        body: Bytes,
    },
    /// Proposer to controller.
    LeaderChange { request: RequestId, retries: u32 },
    /// Replica to backup leader: instance the replica cannot deliver past.
    GapFill { pid: PartitionId, inst: Instance },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Fault model loss.
    Lost,
    DeviceFailed,
    LinkFailed,
    /// Rejected by the receiving role (stale round, out of window, ...).
    Rejected,
    OutOfWindow,
    QueueFull,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Send {
        from: DeviceId,
        to: DeviceId,
        packet: Packet,
    },
    Deliver {
        from: DeviceId,
        to: DeviceId,
        packet: Packet,
    },
    Drop {
        from: DeviceId,
        to: DeviceId,
        packet: Packet,
        reason: DropReason,
    },
    /// A value reached a quorum at some replica for the first time anywhere.
    Decide {
        replica: DeviceId,
        pid: PartitionId,
        inst: Instance,
        rnd: Round,
        #[serde(with = "bytes_hex")]
        value: Bytes,
    },
    /// A command handed to (or, for no-ops, skipped by) the application.
    Delivery {
        replica: DeviceId,
        pid: PartitionId,
        inst: Instance,
        request: Option<RequestId>,
        shards: Option<Vec<PartitionId>>,
        /// True on the worker that actually executed the command.
        executor: bool,
        noop: bool,
    },
    Fail {
        device: DeviceId,
    },
    FailLink {
        from: DeviceId,
        to: DeviceId,
    },
    Reroute {
        from: DeviceId,
        to: DeviceId,
        proposer: Option<u16>,
        retries: Option<u32>,
    },
    Trim {
        replica: DeviceId,
        pid: PartitionId,
        inst: Instance,
    },
    Retry {
        proposer: u16,
        request: RequestId,
        retries: u32,
    },
    LeaderChange {
        proposer: u16,
        request: RequestId,
        retries: u32,
    },
    Complete {
        proposer: u16,
        request: RequestId,
        latency_ns: u64,
    },
    /// A replica asked for an instance to be re-proposed.
    Gap {
        replica: DeviceId,
        pid: PartitionId,
        inst: Instance,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    /// Virtual time in nanoseconds.
    pub t: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// One delivered command as seen in a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceDelivery {
    pub inst: Instance,
    pub request: Option<RequestId>,
    pub shards: Option<Vec<PartitionId>>,
    pub executor: bool,
    pub noop: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<SimEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn push(&mut self, t: u64, kind: EventKind) {
        self.events.push(SimEvent { t, kind });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SimEvent> {
        self.events.iter()
    }

    pub fn decide_count(&self) -> usize {
        self.iter()
            .filter(|e| matches!(e.kind, EventKind::Decide { .. }))
            .count()
    }

    /// Per (replica, pid) delivery sequences in trace order.
    pub fn deliveries(&self) -> BTreeMap<(DeviceId, PartitionId), Vec<TraceDelivery>> {
        let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for e in &self.events {
            if let EventKind::Delivery {
                replica,
                pid,
                inst,
                request,
                shards,
                executor,
                noop,
            } = &e.kind
            {
                out.entry((*replica, *pid))
                    .or_default()
                    .push(TraceDelivery {
                        inst: *inst,
                        request: *request,
                        shards: shards.clone(),
                        executor: *executor,
                        noop: *noop,
                    });
            }
        }
        out
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut *w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(r: impl BufRead) -> io::Result<Trace> {
        let mut events = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Ok(Trace { events })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::MsgType;

    #[test]
    fn jsonl_round_trip() {
        let mut t = Trace::new();
        let msg = PaxosMessage {
            msgtype: MsgType::Phase2b,
            inst: 3,
            rnd: 1,
            vrnd: 1,
            swid: 4,
            pid: 0,
            value: Bytes::from_static(b"v"),
        };
        t.push(
            5,
            EventKind::Send {
                from: 4,
                to: 9,
                packet: Packet::Paxos { msg },
            },
        );
        t.push(
            7,
            EventKind::Decide {
                replica: 9,
                pid: 0,
                inst: 3,
                rnd: 1,
                value: Bytes::from_static(b"v"),
            },
        );
        t.push(
            8,
            EventKind::Delivery {
                replica: 9,
                pid: 0,
                inst: 3,
                request: Some(RequestId(12)),
                shards: None,
                executor: true,
                noop: false,
            },
        );
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().contains("\"kind\":\"SEND\""));
        assert!(text.contains(
            "050000000300010001000400000001 76"
                .replace(' ', "")
                .as_str()
        ));
        let back = Trace::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.decide_count(), 1);
        assert_eq!(back.deliveries()[&(9, 0)][0].inst, 3);
    }
}
