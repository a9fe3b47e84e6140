use std::collections::BTreeMap;

use bytes::Bytes;
use ppaxos_core::replica::cross_shard_order;
use ppaxos_core::trace::{DeviceId, EventKind, Packet, Trace, TraceDelivery};
use ppaxos_core::wire::{Instance, MsgType, PartitionId, Round};

use super::{Violation, ViolationKind};

/// Checks a complete trace: one value per decided instance, replicas that
/// agree on every partition's delivered prefix, gap-free in-order delivery,
/// acceptors that never change a vote, and acyclic multi-shard ordering.
pub fn validate_trace(trace: &Trace) -> Vec<Violation> {
    let mut out = Vec::new();
    agreement(trace, &mut out);
    let deliveries = trace.deliveries();
    delivery_order(&deliveries, &mut out);
    replica_prefixes(&deliveries, &mut out);
    vote_mutation(trace, &mut out);
    let order = cross_shard_order(trace);
    if !order.acyclic {
        let ids: Vec<String> = order.cycle_witness.iter().map(|r| r.to_string()).collect();
        out.push(Violation::new(
            ViolationKind::Acyclicity,
            format!(
                "multi-shard requests ordered in a cycle: {}",
                ids.join(" < ")
            ),
        ));
    }
    out
}

fn agreement(trace: &Trace, out: &mut Vec<Violation>) {
    let mut decided: BTreeMap<(PartitionId, Instance), &Bytes> = BTreeMap::new();
    for e in trace.iter() {
        if let EventKind::Decide {
            pid, inst, value, ..
        } = &e.kind
        {
            match decided.get(&(*pid, *inst)) {
                Some(v) if *v != value => out.push(Violation::new(
                    ViolationKind::Agreement,
                    format!(
                        "partition {pid} instance {inst} decided {} and {}",
                        hex::encode(v),
                        hex::encode(value)
                    ),
                )),
                Some(_) => {}
                None => {
                    decided.insert((*pid, *inst), value);
                }
            }
        }
    }
}

fn delivery_order(
    deliveries: &BTreeMap<(DeviceId, PartitionId), Vec<TraceDelivery>>,
    out: &mut Vec<Violation>,
) {
    for ((replica, pid), seq) in deliveries {
        if let Some((k, d)) = seq.iter().enumerate().find(|(k, d)| d.inst as usize != *k) {
            out.push(Violation::new(
                ViolationKind::DeliveryOrder,
                format!(
                    "replica {replica} partition {pid}: delivery #{k} is instance {}",
                    d.inst
                ),
            ));
        }
    }
}

fn replica_prefixes(
    deliveries: &BTreeMap<(DeviceId, PartitionId), Vec<TraceDelivery>>,
    out: &mut Vec<Violation>,
) {
    let mut by_pid: BTreeMap<PartitionId, Vec<(DeviceId, &Vec<TraceDelivery>)>> = BTreeMap::new();
    for ((replica, pid), seq) in deliveries {
        by_pid.entry(*pid).or_default().push((*replica, seq));
    }
    let key = |d: &TraceDelivery| (d.inst, d.request, d.noop);
    for (pid, seqs) in by_pid {
        // Every sequence must be a prefix of the longest one.
        let (rl, longest) = *seqs.iter().max_by_key(|(_, s)| s.len()).expect("non-empty");
        for &(r, s) in &seqs {
            if let Some(k) = (0..s.len()).find(|&k| key(&s[k]) != key(&longest[k])) {
                out.push(Violation::new(
                    ViolationKind::Agreement,
                    format!("partition {pid}: replicas {r} and {rl} diverge at delivery #{k}"),
                ));
            }
        }
    }
}

fn vote_mutation(trace: &Trace, out: &mut Vec<Violation>) {
    let mut votes: BTreeMap<(DeviceId, PartitionId, Instance), (Round, &Bytes)> = BTreeMap::new();
    for e in trace.iter() {
        let EventKind::Send {
            from,
            packet: Packet::Paxos { msg },
            ..
        } = &e.kind
        else {
            continue;
        };
        if msg.msgtype != MsgType::Phase2b {
            continue;
        }
        let key = (*from, msg.pid, msg.inst);
        match votes.get(&key) {
            Some((rnd, value)) if *rnd == msg.vrnd && **value != msg.value => {
                out.push(Violation::new(
                    ViolationKind::VoteMutation,
                    format!(
                        "acceptor {from} changed its round-{rnd} vote for partition {} instance {}",
                        msg.pid, msg.inst
                    ),
                ))
            }
            Some((rnd, _)) if *rnd > msg.vrnd => out.push(Violation::new(
                ViolationKind::VoteMutation,
                format!(
                    "acceptor {from} voted at round {} after round {rnd} for partition {} instance {}",
                    msg.vrnd, msg.pid, msg.inst
                ),
            )),
            _ => {
                votes.insert(key, (msg.vrnd, &msg.value));
            }
        }
    }
}
