//! Deterministic discrete-event network running the real leader, acceptor,
//! replica and proposer code.
//!
//! Devices are addressed by [`DeviceId`], which doubles as the switch id in
//! Paxos headers. Every device processes one message at a time for a fixed
//! service time. Links are a full mesh with base latency plus uniform jitter;
//! the fault model adds loss, duplication and extra delay. Events are ordered
//! by (virtual time, insertion sequence) and all randomness comes from the
//! configured seed, so a configuration always yields the same trace.

mod config;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::time::Duration;

use bytes::{BufMut, Bytes, BytesMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use ppaxos_core::acceptor::{AcceptorError, AcceptorLog};
use ppaxos_core::action::{Actions, Dispatch, Group};
use ppaxos_core::envelope::RequestId;
use ppaxos_core::kvapp::{encode_batch, KvCommand, KvError, ShardStore};
use ppaxos_core::leader::Leader;
use ppaxos_core::proposer::{KeySpace, Proposer, ProposerConfig, TimeoutAction};
use ppaxos_core::replica::{DeliveredCommand, ReplicaError, ReplicaPartition, ShardApp};
use ppaxos_core::trace::{DeviceId, DropReason, EventKind, Packet, Trace};
use ppaxos_core::wire::{Instance, MsgType, PartitionId, PaxosMessage};

pub use config::*;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("opening shard storage: {0}")]
    Storage(#[from] KvError),
}

/// Counters gathered alongside the trace.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimStats {
    pub submitted: u64,
    pub completed: u64,
    pub resends: u64,
    pub leader_change_requests: u64,
    pub reroutes: u64,
    /// Decided instances per partition (first decision anywhere).
    pub decided: BTreeMap<PartitionId, u64>,
    /// Highest number of occupied log cells per (acceptor, partition).
    pub peak_occupancy: BTreeMap<(DeviceId, PartitionId), u32>,
    /// PHASE2A/PHASE1A beyond the acceptor window (ahead of the ring).
    pub out_of_window_ahead: u64,
    /// Messages for instances already trimmed.
    pub out_of_window_behind: u64,
    pub lost: u64,
    pub duplicated: u64,
    /// Conflicting quorums seen by a replica.
    pub replica_conflicts: u64,
    /// Multi-shard commands still waiting at a barrier when the run ended.
    pub barrier_stalls: u64,
    pub end_ns: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: Trace,
    pub stats: SimStats,
}

#[derive(Debug, Clone)]
enum Ev {
    Start {
        client: DeviceId,
    },
    Arrive {
        from: DeviceId,
        to: DeviceId,
        packet: Packet,
    },
    Process {
        from: DeviceId,
        to: DeviceId,
        packet: Packet,
    },
    ExecDone {
        replica: DeviceId,
        pids: Vec<PartitionId>,
    },
    ClientTimer {
        client: DeviceId,
        request: RequestId,
    },
    GapTimer {
        replica: DeviceId,
    },
    Fault(FaultAction),
}

struct Queued {
    t: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, o: &Self) -> bool {
        (self.t, self.seq) == (o.t, o.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Queued {
    // Reversed: BinaryHeap pops the earliest (t, seq) first.
    fn cmp(&self, o: &Self) -> Ordering {
        (o.t, o.seq).cmp(&(self.t, self.seq))
    }
}

struct ReplicaNode {
    partitions: Vec<ReplicaPartition>,
    shards: Vec<Option<ShardStore>>,
    queues: Vec<VecDeque<DeliveredCommand>>,
    busy: Vec<bool>,
    last_gap: Vec<Option<Instance>>,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    now: u64,
    end_ns: u64,
    seq: u64,
    queue: BinaryHeap<Queued>,
    trace: Trace,
    net_rng: ChaCha8Rng,
    work_rng: ChaCha8Rng,
    keys: KeySpace,
    failed: BTreeSet<DeviceId>,
    failed_links: BTreeSet<(DeviceId, DeviceId)>,
    busy_until: BTreeMap<DeviceId, u64>,
    route: DeviceId,
    last_reroute: Option<u64>,
    leaders: BTreeMap<DeviceId, Leader>,
    acceptors: BTreeMap<DeviceId, AcceptorLog>,
    replicas: BTreeMap<DeviceId, ReplicaNode>,
    clients: BTreeMap<DeviceId, Proposer>,
    decided: BTreeMap<(PartitionId, Instance), Bytes>,
    stats: SimStats,
}

/// Runs the configured scenario to completion.
pub fn run(cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg)?;
    sim.run();
    Ok(sim.finish())
}

fn dur(ns: u64) -> Duration {
    Duration::from_nanos(ns)
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self, SimError> {
        let t = &cfg.topology;
        let p = cfg.partitions;
        let keys = KeySpace::new(p, cfg.workload.key_range)
            .map_err(|e| ConfigError::Workload(e.to_string()))?;
        let mut leaders = BTreeMap::new();
        leaders.insert(PRIMARY, Leader::primary(PRIMARY, p));
        let stride = t.backups as u16 + 1;
        for i in 0..t.backups as u16 {
            let id = BACKUP_BASE + i;
            let l = Leader::backup(id, p, i + 1, t.acceptors, stride)
                .map_err(|e| ConfigError::Topology(e.to_string()))?;
            leaders.insert(id, l);
        }
        let acceptors = t
            .acceptor_ids()
            .map(|id| (id, AcceptorLog::new(id, p, t.log_capacity)))
            .collect();
        let mut replicas = BTreeMap::new();
        for id in t.replica_ids() {
            let root = cfg
                .storage_dir
                .as_ref()
                .map(|d| d.join(format!("replica-{id}")));
            let shards = (0..p)
                .map(|pid| {
                    ShardStore::open(cfg.backend, pid, keys, root.as_deref(), cfg.fsync).map(Some)
                })
                .collect::<Result<Vec<_>, _>>()?;
            replicas.insert(
                id,
                ReplicaNode {
                    partitions: (0..p)
                        .map(|pid| {
                            ReplicaPartition::new(
                                pid,
                                t.acceptors,
                                t.log_capacity,
                                t.trim_threshold,
                            )
                        })
                        .collect(),
                    shards,
                    queues: vec![VecDeque::new(); p as usize],
                    busy: vec![false; p as usize],
                    last_gap: vec![None; p as usize],
                },
            );
        }
        let pcfg = ProposerConfig {
            partitions: p,
            retry_timeout: cfg.retry_timeout,
            max_retries: cfg.max_retries,
            key_range: cfg.workload.key_range,
        };
        let mut clients = BTreeMap::new();
        for i in 0..cfg.workload.clients as u16 {
            let id = PROPOSER_BASE + i;
            let prop = Proposer::new(id, pcfg.clone())
                .map_err(|e| ConfigError::Workload(e.to_string()))?;
            clients.insert(id, prop);
        }
        let mut work_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        work_rng.set_stream(1);
        let mut sim = Sim {
            cfg,
            now: 0,
            end_ns: cfg.workload.duration_ms.saturating_mul(1_000_000),
            seq: 0,
            queue: BinaryHeap::new(),
            trace: Trace::new(),
            net_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            work_rng,
            keys,
            failed: BTreeSet::new(),
            failed_links: BTreeSet::new(),
            busy_until: BTreeMap::new(),
            route: PRIMARY,
            last_reroute: None,
            leaders,
            acceptors,
            replicas,
            clients,
            decided: BTreeMap::new(),
            stats: SimStats::default(),
        };
        let ids: Vec<DeviceId> = sim.clients.keys().copied().collect();
        for (k, client) in ids.into_iter().enumerate() {
            sim.schedule(k as u64 * 100, Ev::Start { client });
        }
        for id in t.replica_ids() {
            sim.schedule(t.gap_check_us * 1_000, Ev::GapTimer { replica: id });
        }
        for f in &cfg.schedule {
            sim.schedule(f.at_us * 1_000, Ev::Fault(f.action.clone()));
        }
        Ok(sim)
    }

    fn schedule(&mut self, at: u64, ev: Ev) {
        self.seq += 1;
        self.queue.push(Queued {
            t: at,
            seq: self.seq,
            ev,
        });
    }

    fn log(&mut self, kind: EventKind) {
        self.trace.push(self.now, kind);
    }

    fn run(&mut self) {
        while let Some(q) = self.queue.pop() {
            if q.t > self.end_ns {
                break;
            }
            self.now = q.t;
            self.step(q.ev);
        }
        self.stats.end_ns = self.now;
    }

    fn finish(mut self) -> SimOutcome {
        for (&id, a) in &self.acceptors {
            for pid in 0..self.cfg.partitions {
                self.stats
                    .peak_occupancy
                    .insert((id, pid), a.peak_occupied(pid));
            }
        }
        self.stats.barrier_stalls = self
            .replicas
            .values()
            .flat_map(|r| r.queues.iter())
            .filter(|q| q.front().is_some_and(is_multi))
            .count() as u64;
        SimOutcome {
            trace: self.trace,
            stats: self.stats,
        }
    }

    fn step(&mut self, ev: Ev) {
        match ev {
            Ev::Start { client } => self.submit_next(client),
            Ev::Arrive { from, to, packet } => self.arrive(from, to, packet),
            Ev::Process { from, to, packet } => self.process(from, to, packet),
            Ev::ExecDone { replica, pids } => self.exec_done(replica, pids),
            Ev::ClientTimer { client, request } => self.client_timer(client, request),
            Ev::GapTimer { replica } => self.gap_timer(replica),
            Ev::Fault(f) => self.fault(f),
        }
    }

    // ---- network ----

    fn send(&mut self, from: DeviceId, to: DeviceId, packet: Packet) {
        if self.cfg.record_network {
            self.log(EventKind::Send {
                from,
                to,
                packet: packet.clone(),
            });
        }
        if self.failed_links.contains(&(from, to)) {
            self.log(EventKind::Drop {
                from,
                to,
                packet,
                reason: DropReason::LinkFailed,
            });
            return;
        }
        let cfg = self.cfg;
        let f = &cfg.faults;
        if f.drop > 0.0 && self.net_rng.random_bool(f.drop) {
            self.stats.lost += 1;
            self.log(EventKind::Drop {
                from,
                to,
                packet,
                reason: DropReason::Lost,
            });
            return;
        }
        let copies = if f.duplicate > 0.0 && self.net_rng.random_bool(f.duplicate) {
            self.stats.duplicated += 1;
            2
        } else {
            1
        };
        for _ in 0..copies {
            let delay = self.latency();
            self.schedule(
                self.now + delay,
                Ev::Arrive {
                    from,
                    to,
                    packet: packet.clone(),
                },
            );
        }
    }

    fn latency(&mut self) -> u64 {
        let t = &self.cfg.topology;
        let (jitter, reorder) = (t.link_jitter_ns, self.cfg.faults.reorder_ns);
        let mut d = t.link_base_ns;
        if jitter > 0 {
            d += self.net_rng.random_range(0..=jitter);
        }
        if reorder > 0 {
            d += self.net_rng.random_range(0..=reorder);
        }
        d
    }

    fn send_paxos(&mut self, from: DeviceId, to: DeviceId, msg: PaxosMessage) {
        self.send(from, to, Packet::Paxos { msg });
    }

    fn dispatch(&mut self, from: DeviceId, actions: Actions) {
        for a in actions {
            match a.dispatch {
                Dispatch::Forward(to) => self.send_paxos(from, to, a.msg),
                Dispatch::Multicast(Group::Acceptors) => {
                    let ids: Vec<_> = self.cfg.topology.acceptor_ids().collect();
                    for to in ids {
                        self.send_paxos(from, to, a.msg.clone());
                    }
                }
                Dispatch::Multicast(Group::Replicas) => {
                    let ids: Vec<_> = self.cfg.topology.replica_ids().collect();
                    for to in ids {
                        self.send_paxos(from, to, a.msg.clone());
                    }
                }
            }
        }
    }

    fn service_ns(&self, id: DeviceId) -> u64 {
        let t = &self.cfg.topology;
        match DeviceRef::from_id(id) {
            DeviceRef::Controller => t.controller_service_ns,
            DeviceRef::Primary => t.leader_service_ns,
            DeviceRef::Backup(_) => t.backup_service_ns,
            DeviceRef::Acceptor(_) => t.acceptor_service_ns,
            DeviceRef::Replica(_) => t.replica_service_ns,
            DeviceRef::Proposer(_) => 0,
        }
    }

    fn drop_packet(&mut self, from: DeviceId, to: DeviceId, packet: Packet, reason: DropReason) {
        self.log(EventKind::Drop {
            from,
            to,
            packet,
            reason,
        });
    }

    fn arrive(&mut self, from: DeviceId, to: DeviceId, packet: Packet) {
        if self.failed.contains(&to) {
            return self.drop_packet(from, to, packet, DropReason::DeviceFailed);
        }
        let service = self.service_ns(to);
        let start = self.now.max(self.busy_until.get(&to).copied().unwrap_or(0));
        let done = start + service;
        self.busy_until.insert(to, done);
        self.schedule(done, Ev::Process { from, to, packet });
    }

    fn process(&mut self, from: DeviceId, to: DeviceId, packet: Packet) {
        if self.failed.contains(&to) {
            return self.drop_packet(from, to, packet, DropReason::DeviceFailed);
        }
        if self.cfg.record_network {
            self.log(EventKind::Deliver {
                from,
                to,
                packet: packet.clone(),
            });
        }
        match (DeviceRef::from_id(to), packet) {
            (DeviceRef::Primary | DeviceRef::Backup(_), Packet::Paxos { msg }) => {
                self.on_leader(from, to, msg)
            }
            (DeviceRef::Backup(_), Packet::GapFill { pid, inst }) => {
                let res = self
                    .leaders
                    .get_mut(&to)
                    .expect("leader exists")
                    .recover(pid, inst);
                match res {
                    Ok(actions) => self.dispatch(to, actions),
                    Err(_) => self.drop_packet(
                        from,
                        to,
                        Packet::GapFill { pid, inst },
                        DropReason::Rejected,
                    ),
                }
            }
            (DeviceRef::Acceptor(_), Packet::Paxos { msg }) => self.on_acceptor(from, to, msg),
            (DeviceRef::Replica(_), Packet::Paxos { msg }) => self.on_replica(from, to, msg),
            (DeviceRef::Controller, Packet::LeaderChange { retries, .. }) => {
                self.on_leader_change(from, retries)
            }
            (DeviceRef::Proposer(_), Packet::Response { request, body }) => {
                self.on_response(to, request, body)
            }
            (_, packet) => self.drop_packet(from, to, packet, DropReason::Rejected),
        }
    }

    // ---- roles ----

    fn on_leader(&mut self, from: DeviceId, to: DeviceId, msg: PaxosMessage) {
        let res = self
            .leaders
            .get_mut(&to)
            .expect("leader exists")
            .handle(&msg);
        match res {
            Ok(actions) => self.dispatch(to, actions),
            Err(_) => self.drop_packet(from, to, Packet::Paxos { msg }, DropReason::Rejected),
        }
    }

    fn on_acceptor(&mut self, from: DeviceId, to: DeviceId, msg: PaxosMessage) {
        let res = self
            .acceptors
            .get_mut(&to)
            .expect("acceptor exists")
            .handle(&msg);
        match res {
            Ok(actions) => self.dispatch(to, actions),
            Err(AcceptorError::OutOfWindow { inst, low, .. }) => {
                if inst < low {
                    self.stats.out_of_window_behind += 1;
                } else {
                    self.stats.out_of_window_ahead += 1;
                }
                self.drop_packet(from, to, Packet::Paxos { msg }, DropReason::OutOfWindow)
            }
            Err(_) => self.drop_packet(from, to, Packet::Paxos { msg }, DropReason::Rejected),
        }
    }

    fn on_replica(&mut self, from: DeviceId, to: DeviceId, msg: PaxosMessage) {
        let pid = msg.pid;
        if msg.msgtype != MsgType::Phase2b || pid >= self.cfg.partitions {
            return self.drop_packet(from, to, Packet::Paxos { msg }, DropReason::Rejected);
        }
        let node = self.replicas.get_mut(&to).expect("replica exists");
        let part = &mut node.partitions[pid as usize];
        match part.on_phase2b(&msg) {
            Ok(out) => {
                let trim = {
                    node.queues[pid as usize].extend(out.delivered);
                    part.maybe_trim()
                };
                if let Some(d) = out.decided {
                    self.decide(to, pid, d.inst, d.rnd, d.value);
                }
                self.try_start(to, pid);
                if let Some(trim) = trim {
                    self.log(EventKind::Trim {
                        replica: to,
                        pid,
                        inst: trim.inst,
                    });
                    let targets: Vec<DeviceId> = self
                        .cfg
                        .topology
                        .acceptor_ids()
                        .chain(self.cfg.topology.leader_ids())
                        .collect();
                    for t in targets {
                        self.send_paxos(to, t, trim.clone());
                    }
                }
            }
            Err(ReplicaError::SafetyViolation { inst, second, .. }) => {
                self.stats.replica_conflicts += 1;
                self.decide(to, pid, inst, msg.rnd, second);
            }
            Err(_) => self.drop_packet(from, to, Packet::Paxos { msg }, DropReason::Rejected),
        }
    }

    fn decide(
        &mut self,
        replica: DeviceId,
        pid: PartitionId,
        inst: Instance,
        rnd: u16,
        value: Bytes,
    ) {
        let fresh = match self.decided.get(&(pid, inst)) {
            None => {
                self.decided.insert((pid, inst), value.clone());
                *self.stats.decided.entry(pid).or_default() += 1;
                true
            }
            Some(v) => *v != value,
        };
        if fresh {
            self.log(EventKind::Decide {
                replica,
                pid,
                inst,
                rnd,
                value,
            });
        }
    }

    /// Starts the next command of `pid` on `replica` if its worker is idle.
    fn try_start(&mut self, replica: DeviceId, pid: PartitionId) {
        loop {
            let node = self.replicas.get_mut(&replica).expect("replica exists");
            let p = pid as usize;
            if node.busy[p] {
                return;
            }
            let Some(front) = node.queues[p].front() else {
                return;
            };
            if front.noop {
                let cmd = node.queues[p].pop_front().unwrap();
                self.log(EventKind::Delivery {
                    replica,
                    pid,
                    inst: cmd.inst,
                    request: None,
                    shards: None,
                    executor: false,
                    noop: true,
                });
                continue;
            }
            let pids = match &front.multi_shard {
                Some(s) if is_multi(front) && s.contains(&pid) => {
                    let ready = s.iter().all(|&q| {
                        !node.busy[q as usize]
                            && node.queues[q as usize].front().is_some_and(|c| {
                                c.request == front.request && c.multi_shard == front.multi_shard
                            })
                    });
                    if !ready {
                        return;
                    }
                    s.clone()
                }
                _ => vec![pid],
            };
            for &q in &pids {
                node.busy[q as usize] = true;
            }
            let at = self.now + self.cfg.topology.exec_ns;
            self.schedule(at, Ev::ExecDone { replica, pids });
            return;
        }
    }

    fn exec_done(&mut self, replica: DeviceId, pids: Vec<PartitionId>) {
        if self.failed.contains(&replica) {
            return;
        }
        let node = self.replicas.get_mut(&replica).expect("replica exists");
        let cmds: Vec<DeliveredCommand> = pids
            .iter()
            .map(|&q| node.queues[q as usize].pop_front().expect("command queued"))
            .collect();
        let cmd = &cmds[0];
        let body = if pids.len() == 1 {
            node.shards[pids[0] as usize]
                .as_mut()
                .expect("shard present")
                .execute(cmd)
        } else {
            let mut states: Vec<(PartitionId, ShardStore)> = pids
                .iter()
                .map(|&q| (q, node.shards[q as usize].take().expect("shard present")))
                .collect();
            let body = ShardStore::execute_multi(&mut states, cmd);
            for (q, s) in states {
                node.shards[q as usize] = Some(s);
            }
            body
        };
        for &q in &pids {
            node.busy[q as usize] = false;
        }
        let executor = pids[0];
        for (c, &q) in cmds.iter().zip(&pids) {
            self.log(EventKind::Delivery {
                replica,
                pid: q,
                inst: c.inst,
                request: c.request,
                shards: c.multi_shard.clone(),
                executor: q == executor,
                noop: false,
            });
        }
        if let Some(request) = cmd.request {
            if self.responder() == Some(replica) {
                self.send(
                    replica,
                    request.proposer(),
                    Packet::Response { request, body },
                );
            }
        }
        for &q in &pids {
            self.try_start(replica, q);
        }
    }

    /// The lowest-id live replica answers clients.
    fn responder(&self) -> Option<DeviceId> {
        self.cfg
            .topology
            .replica_ids()
            .find(|r| !self.failed.contains(r))
    }

    fn gap_timer(&mut self, replica: DeviceId) {
        if self.failed.contains(&replica) {
            return;
        }
        let target = self.gap_target();
        let node = self.replicas.get_mut(&replica).expect("replica exists");
        let mut fills = Vec::new();
        for (p, part) in node.partitions.iter().enumerate() {
            let gap = part.gap();
            if let Some(g) = gap.filter(|_| node.last_gap[p] == gap) {
                fills.push((p as PartitionId, g));
            }
            node.last_gap[p] = gap;
        }
        for (pid, inst) in fills {
            self.log(EventKind::Gap { replica, pid, inst });
            if let Some(t) = target {
                self.send(replica, t, Packet::GapFill { pid, inst });
            }
        }
        let next = self.now + self.cfg.topology.gap_check_us.max(1) * 1_000;
        if self.active() && next <= self.end_ns {
            self.schedule(next, Ev::GapTimer { replica });
        }
    }

    /// Backup handling hole recovery: the current leader when it is a
    /// backup, else the first live backup.
    fn gap_target(&self) -> Option<DeviceId> {
        if self.route != PRIMARY && !self.failed.contains(&self.route) {
            return Some(self.route);
        }
        self.cfg
            .topology
            .leader_ids()
            .skip(1)
            .find(|b| !self.failed.contains(b))
    }

    fn active(&self) -> bool {
        self.stats.submitted < self.cfg.workload.messages
            || self.clients.values().any(|c| c.outstanding() > 0)
    }

    // ---- controller ----

    fn on_leader_change(&mut self, from: DeviceId, retries: u32) {
        let hold = self.cfg.topology.hold_down_us * 1_000;
        if self.last_reroute.is_some_and(|t| self.now < t + hold) {
            return;
        }
        let ids: Vec<DeviceId> = self.cfg.topology.leader_ids().collect();
        let pos = ids.iter().position(|&i| i == self.route).unwrap_or(0);
        let next = (1..ids.len())
            .map(|k| ids[(pos + k) % ids.len()])
            .find(|i| !self.failed.contains(i));
        if let Some(next) = next {
            self.reroute(next, Some(from), Some(retries));
        }
    }

    fn reroute(&mut self, to: DeviceId, proposer: Option<DeviceId>, retries: Option<u32>) {
        if to == self.route {
            return;
        }
        // Bring the new leader's instance counters past everything decided.
        let mut highest = BTreeMap::new();
        if let Some(r) = self.responder() {
            for part in &self.replicas[&r].partitions {
                if let Some(h) = part.highest_decided() {
                    highest.insert(part.pid(), h);
                }
            }
        }
        self.leaders
            .get_mut(&to)
            .expect("leader exists")
            .sync(&highest);
        let from = self.route;
        self.route = to;
        self.last_reroute = Some(self.now);
        self.stats.reroutes += 1;
        self.log(EventKind::Reroute {
            from,
            to,
            proposer,
            retries,
        });
    }

    fn fault(&mut self, f: FaultAction) {
        match f {
            FaultAction::FailDevice { device } => {
                let id = device.id();
                self.failed.insert(id);
                self.log(EventKind::Fail { device: id });
            }
            FaultAction::FailLink { from, to, one_way } => {
                let (a, b) = (from.id(), to.id());
                self.failed_links.insert((a, b));
                self.log(EventKind::FailLink { from: a, to: b });
                if !one_way {
                    self.failed_links.insert((b, a));
                    self.log(EventKind::FailLink { from: b, to: a });
                }
            }
            FaultAction::Reroute { to } => self.reroute(to.id(), None, None),
        }
    }

    // ---- clients ----

    fn submit_next(&mut self, client: DeviceId) {
        if self.failed.contains(&client) || self.stats.submitted >= self.cfg.workload.messages {
            return;
        }
        let (payload, target) = self.next_command();
        let now = dur(self.now);
        let prop = self.clients.get_mut(&client).expect("client exists");
        let submitted = match target {
            Target::Key(key) => prop.submit(&payload, key, now),
            Target::Shards(shards) => prop.submit_multi(&payload, &shards, now),
        };
        let (id, msg) = submitted.expect("workload stays within bounds");
        self.stats.submitted += 1;
        self.send_request(client, msg);
        self.arm_timer(client, id);
    }

    fn send_request(&mut self, client: DeviceId, msg: PaxosMessage) {
        let route = self.route;
        self.send_paxos(client, route, msg);
    }

    fn arm_timer(&mut self, client: DeviceId, request: RequestId) {
        let at = self.now + self.cfg.retry_timeout.as_nanos() as u64;
        self.schedule(at, Ev::ClientTimer { client, request });
    }

    fn client_timer(&mut self, client: DeviceId, request: RequestId) {
        if self.failed.contains(&client) {
            return;
        }
        let prop = self.clients.get_mut(&client).expect("client exists");
        if prop.deadline(request) != Some(dur(self.now)) {
            return;
        }
        match prop.on_timeout(request, dur(self.now)) {
            Some(TimeoutAction::Resend(msg)) => {
                let retries = prop.pending(request).map_or(0, |p| p.retries);
                self.stats.resends += 1;
                self.log(EventKind::Retry {
                    proposer: client,
                    request,
                    retries,
                });
                self.send_request(client, msg);
            }
            Some(TimeoutAction::RequestLeaderChange { resend, retries }) => {
                self.stats.leader_change_requests += 1;
                self.log(EventKind::LeaderChange {
                    proposer: client,
                    request,
                    retries,
                });
                self.send(
                    client,
                    CONTROLLER,
                    Packet::LeaderChange { request, retries },
                );
                self.send_request(client, resend);
            }
            None => return,
        }
        self.arm_timer(client, request);
    }

    fn on_response(&mut self, client: DeviceId, request: RequestId, body: Bytes) {
        let prop = self.clients.get_mut(&client).expect("client exists");
        if let Some(c) = prop.on_response(request, body, dur(self.now)) {
            self.stats.completed += 1;
            self.log(EventKind::Complete {
                proposer: client,
                request: c.id,
                latency_ns: c.latency.as_nanos() as u64,
            });
            self.submit_next(client);
        }
    }

    fn next_command(&mut self) -> (Bytes, Target) {
        let cfg = self.cfg;
        let w = &cfg.workload;
        let p = cfg.partitions;
        let seq = self.stats.submitted;
        if p > 1
            && w.multi_shard_fraction > 0.0
            && self.work_rng.random_bool(w.multi_shard_fraction)
        {
            let k = self.work_rng.random_range(2..=p.min(4)) as usize;
            let mut all: Vec<PartitionId> = (0..p).collect();
            let mut shards = Vec::with_capacity(k);
            for _ in 0..k {
                let i = self.work_rng.random_range(0..all.len());
                shards.push(all.swap_remove(i));
            }
            shards.sort_unstable();
            let cmds: Vec<KvCommand> = shards
                .iter()
                .map(|&s| {
                    let key = self.key_in_shard(s);
                    KvCommand::put(key, self.value(), seq)
                })
                .collect();
            return (encode_batch(&cmds), Target::Shards(shards));
        }
        let key = self.work_rng.random_range(0..w.key_range);
        let cmd = if self.work_rng.random_bool(w.put_ratio) {
            KvCommand::put(key, self.value(), seq)
        } else {
            KvCommand::get(key, seq)
        };
        (cmd.encode(), Target::Key(key))
    }

    fn key_in_shard(&mut self, s: PartitionId) -> u64 {
        let (p, r) = (self.keys.partitions as u128, self.keys.key_range as u128);
        let lo = (s as u128 * r).div_ceil(p) as u64;
        let hi = ((s as u128 + 1) * r).div_ceil(p) as u64;
        self.work_rng.random_range(lo..hi)
    }

    fn value(&mut self) -> Bytes {
        let mut b = BytesMut::with_capacity(self.cfg.workload.value_size);
        for _ in 0..self.cfg.workload.value_size {
            b.put_u8(self.work_rng.random_range(b'a'..=b'z'));
        }
        b.freeze()
    }
}

enum Target {
    Key(u64),
    Shards(Vec<PartitionId>),
}

fn is_multi(c: &DeliveredCommand) -> bool {
    c.multi_shard.as_ref().is_some_and(|s| s.len() > 1)
}
