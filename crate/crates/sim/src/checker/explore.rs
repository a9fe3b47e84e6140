//! Breadth-first enumeration of message schedules over the production
//! leader, acceptor and replica transition functions.
//!
//! Requests are handed to the leaders up front, so the initial state holds
//! the primary's round-0 PHASE2As and, with two proposers, the backup's
//! PHASE1As. Each step picks one in-flight message and delivers, drops or
//! duplicates it (a duplicate is delivered now and stays in flight once
//! more). States are deduplicated by a 128-bit fingerprint; parent links
//! give a shortest schedule to every violation.
//!
//! Two learners watch the votes. The replica receives PHASE2Bs over the
//! network like any other message, while a second partition learner sees
//! every vote the moment it is cast, so a value chosen by the acceptors is
//! noticed even when no replica hears about it.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use ppaxos_core::acceptor::{AcceptorLog, Variant};
use ppaxos_core::action::{Actions, Dispatch, Group};
use ppaxos_core::envelope::{self, RequestId};
use ppaxos_core::leader::Leader;
use ppaxos_core::replica::{ReplicaError, ReplicaPartition};
use ppaxos_core::wire::{MsgType, PaxosMessage, SwitchId};

use super::{Violation, ViolationKind};

const PRIMARY_SWID: SwitchId = 1;
const BACKUP_SWID: SwitchId = 2;
const ACCEPTOR_SWID: SwitchId = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreConfig {
    /// 1 (primary only, round 0) or 2 (plus a backup at round 1).
    pub proposers: u8,
    pub acceptors: usize,
    pub partitions: u16,
    /// Requests per proposer per partition.
    pub instances: u32,
    pub drop: bool,
    pub duplicate: bool,
    /// Only the first `max_reorder + 1` in-flight messages (in send order)
    /// may be picked. `None` lets any message overtake any other.
    pub max_reorder: Option<usize>,
    pub depth: Option<usize>,
    /// Distinct states after which exploration stops with an error.
    pub state_cap: usize,
    /// Worker threads; 0 uses every core, 1 runs on the calling thread.
    pub threads: usize,
    pub max_violations: usize,
    /// PHASE2Bs travel to the replica through the faulty network too.
    /// Otherwise the replica hears every vote when it is cast.
    pub learner_faults: bool,
    /// Prune schedules that cannot reach new protocol states; see `choices`.
    pub reduce: bool,
    #[serde(skip)]
    pub variant: Variant,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            proposers: 2,
            acceptors: 3,
            partitions: 1,
            instances: 2,
            drop: true,
            duplicate: true,
            max_reorder: None,
            depth: None,
            state_cap: 20_000_000,
            threads: 0,
            max_violations: 16,
            learner_faults: false,
            reduce: true,
            variant: Variant::Correct,
        }
    }
}

impl ExploreConfig {
    fn validate(&self) -> Result<(), ExploreError> {
        let bad = |m: &str| Err(ExploreError::Config(m.to_string()));
        if !(1..=2).contains(&self.proposers) {
            return bad("proposers must be 1 or 2");
        }
        if self.acceptors == 0 || self.acceptors.is_multiple_of(2) || self.acceptors > 9 {
            return bad("acceptors must be odd and at most 9");
        }
        if self.partitions == 0 || self.partitions > 4 {
            return bad("partitions must be in 1..=4");
        }
        if !(1..=3).contains(&self.instances) {
            return bad("instances must be in 1..=3");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Backup,
    Acceptor(u16),
    Replica,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Deliver,
    Drop,
    Duplicate,
}

/// One scheduling decision: which in-flight message (by position in the
/// state's message list) and what happens to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub index: u32,
    pub choice: Choice,
    pub to: Node,
    pub msgtype: MsgType,
    pub inst: u32,
    pub rnd: u16,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreStats {
    pub states: u64,
    pub transitions: u64,
    pub max_depth: usize,
    /// Most instances any reachable state had chosen.
    pub max_decided: u64,
    /// States with nothing left in flight.
    pub terminal_states: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreReport {
    pub violations: Vec<Violation>,
    pub stats: ExploreStats,
}

impl ExploreReport {
    /// No schedule decides anything: the configuration cannot make progress.
    pub fn never_decides(&self) -> bool {
        self.stats.max_decided == 0
    }
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("invalid exploration bounds: {0}")]
    Config(String),
    #[error("state cap exceeded after {} states", .partial.stats.states)]
    BoundExceeded { partial: Box<ExploreReport> },
    #[error("schedule step {step} does not apply")]
    BadSchedule { step: usize },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Flight {
    to: Node,
    msg: PaxosMessage,
    /// A duplicate may still be produced.
    dup: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct State {
    backup: Option<Leader>,
    acceptors: Vec<AcceptorLog>,
    replica: Vec<ReplicaPartition>,
    oracle: Vec<ReplicaPartition>,
    flight: Vec<Flight>,
    /// Raised by the replica while handling votes inline; drained by `step`.
    pending_violations: Vec<Violation>,
    /// Instances the acceptors have chosen so far.
    decided: u64,
}

fn fingerprint(s: &State) -> u128 {
    let mut a = DefaultHasher::new();
    0u8.hash(&mut a);
    s.hash(&mut a);
    let mut b = DefaultHasher::new();
    1u8.hash(&mut b);
    s.hash(&mut b);
    ((a.finish() as u128) << 64) | b.finish() as u128
}

fn learner(cfg: &ExploreConfig) -> Vec<ReplicaPartition> {
    (0..cfg.partitions)
        .map(|pid| ReplicaPartition::new(pid, cfg.acceptors, cfg.instances, f64::INFINITY))
        .collect()
}

impl State {
    fn initial(cfg: &ExploreConfig) -> State {
        let acceptors = (0..cfg.acceptors as u16)
            .map(|k| {
                AcceptorLog::new(ACCEPTOR_SWID + k, cfg.partitions, cfg.instances)
                    .with_variant(cfg.variant)
            })
            .collect();
        let mut s = State {
            backup: None,
            acceptors,
            replica: learner(cfg),
            oracle: learner(cfg),
            flight: Vec::new(),
            pending_violations: Vec::new(),
            decided: 0,
        };
        let mut primary = Leader::primary(PRIMARY_SWID, cfg.partitions);
        let mut backup = (cfg.proposers == 2).then(|| {
            Leader::backup(BACKUP_SWID, cfg.partitions, 1, cfg.acceptors, 2).expect("valid backup")
        });
        let mut seq = 0;
        for pid in 0..cfg.partitions {
            for _ in 0..cfg.instances {
                let v = envelope::encode_command(RequestId::new(0, seq), None, b"a");
                let out = primary
                    .handle(&PaxosMessage::request(pid, v))
                    .expect("primary accepts");
                s.enqueue(cfg, out);
                if let Some(b) = backup.as_mut() {
                    let v = envelope::encode_command(RequestId::new(1, seq), None, b"b");
                    let out = b
                        .handle(&PaxosMessage::request(pid, v))
                        .expect("backup accepts");
                    s.enqueue(cfg, out);
                }
                seq += 1;
            }
        }
        s.backup = backup;
        s.normalize(cfg);
        s
    }

    fn push(&mut self, to: Node, msg: PaxosMessage) {
        self.flight.push(Flight { to, msg, dup: true });
    }

    fn enqueue(&mut self, cfg: &ExploreConfig, actions: Actions) {
        for a in actions {
            match a.dispatch {
                Dispatch::Forward(swid) if swid == BACKUP_SWID => self.push(Node::Backup, a.msg),
                Dispatch::Forward(_) => {}
                Dispatch::Multicast(Group::Acceptors) => {
                    for k in 0..cfg.acceptors as u16 {
                        self.push(Node::Acceptor(k), a.msg.clone());
                    }
                }
                Dispatch::Multicast(Group::Replicas) if cfg.learner_faults => {
                    self.push(Node::Replica, a.msg)
                }
                Dispatch::Multicast(Group::Replicas) => {
                    let mut found = Vec::new();
                    self.process(cfg, Node::Replica, &a.msg, &mut found);
                    self.pending_violations.extend(found);
                }
            }
        }
    }

    /// Without a reorder bound the in-flight messages form a multiset.
    fn normalize(&mut self, cfg: &ExploreConfig) {
        if cfg.max_reorder.is_none() {
            self.flight.sort_unstable();
        }
    }

    fn decided(&self) -> u64 {
        self.decided
    }

    /// Trims every instance that has nothing left in flight and sits below
    /// the scheduled one. Under the instance ordering in `choices` no later
    /// step can touch such an instance, so forgetting it merges states that
    /// differ only in how it ended.
    fn freeze(&mut self, cfg: &ExploreConfig) {
        let focus = self.flight.iter().map(|f| (f.msg.pid, f.msg.inst)).min();
        for pid in 0..cfg.partitions {
            let upto = match focus {
                Some((p, i)) if p == pid => i,
                Some((p, _)) if p < pid => 0,
                _ => cfg.instances,
            };
            if upto == 0 {
                continue;
            }
            let trim = PaxosMessage::trim(pid, upto);
            for a in &mut self.acceptors {
                a.on_trim(&trim).expect("partition in range");
            }
            if let Some(b) = self.backup.as_mut() {
                b.on_trim(&trim);
            }
            self.replica[pid as usize].trim_to(upto);
            self.oracle[pid as usize].trim_to(upto);
        }
    }

    /// Enabled scheduling decisions.
    ///
    /// With `reduce` and unbounded reordering two kinds of schedule are
    /// skipped. Drops: a dropped message behaves exactly like one that is
    /// never picked, so the states reachable after a drop are reachable
    /// without it, minus that message. Interleavings across instances:
    /// messages of different instances touch disjoint acceptor entries,
    /// leader slots and learner quorums, so only the lowest instance with
    /// traffic in flight is scheduled (a persistent set). Every reachable
    /// terminal state, and therefore every violation, is still visited.
    fn choices(&self, cfg: &ExploreConfig) -> Vec<(usize, Choice)> {
        let window = cfg
            .max_reorder
            .map_or(self.flight.len(), |r| (r + 1).min(self.flight.len()));
        let reduce = cfg.reduce && cfg.max_reorder.is_none();
        let focus = self.flight.iter().map(|f| (f.msg.pid, f.msg.inst)).min();
        let mut out = Vec::new();
        for i in 0..window {
            // Identical copies lead to identical successors.
            if i > 0 && cfg.max_reorder.is_none() && self.flight[i] == self.flight[i - 1] {
                continue;
            }
            if reduce && Some((self.flight[i].msg.pid, self.flight[i].msg.inst)) != focus {
                continue;
            }
            out.push((i, Choice::Deliver));
            if cfg.drop && !reduce {
                out.push((i, Choice::Drop));
            }
            if cfg.duplicate && self.flight[i].dup {
                out.push((i, Choice::Duplicate));
            }
        }
        out
    }

    fn step(
        &self,
        cfg: &ExploreConfig,
        index: usize,
        choice: Choice,
    ) -> (State, Step, Vec<Violation>) {
        let mut s = self.clone();
        let f = match choice {
            Choice::Duplicate => {
                s.flight[index].dup = false;
                s.flight[index].clone()
            }
            _ => s.flight.remove(index),
        };
        let step = Step {
            index: index as u32,
            choice,
            to: f.to,
            msgtype: f.msg.msgtype,
            inst: f.msg.inst,
            rnd: f.msg.rnd,
        };
        let mut violations = Vec::new();
        if choice != Choice::Drop {
            s.process(cfg, f.to, &f.msg, &mut violations);
        }
        violations.append(&mut s.pending_violations);
        s.normalize(cfg);
        if cfg.reduce && cfg.max_reorder.is_none() {
            s.freeze(cfg);
        }
        (s, step, violations)
    }

    fn process(
        &mut self,
        cfg: &ExploreConfig,
        to: Node,
        msg: &PaxosMessage,
        out: &mut Vec<Violation>,
    ) {
        match to {
            Node::Backup => {
                if let Some(Ok(actions)) = self.backup.as_mut().map(|b| b.handle(msg)) {
                    self.enqueue(cfg, actions);
                }
            }
            Node::Acceptor(k) => {
                let acc = &mut self.acceptors[k as usize];
                let before = acc.entry(msg.pid, msg.inst).cloned();
                let Ok(actions) = acc.handle(msg) else { return };
                for a in &actions {
                    if a.msg.msgtype != MsgType::Phase2b {
                        continue;
                    }
                    let v = &a.msg;
                    if let Some(b) = before.as_ref().filter(|b| b.voted()) {
                        if b.vrnd > v.vrnd || (b.vrnd == v.vrnd && b.value != v.value) {
                            out.push(Violation::new(
                                ViolationKind::VoteMutation,
                                format!(
                                    "acceptor {} replaced its round-{} vote on instance {} with a round-{} vote",
                                    v.swid, b.vrnd, v.inst, v.vrnd
                                ),
                            ));
                        }
                    }
                    match self.oracle[v.pid as usize].on_phase2b(v) {
                        Ok(o) => self.decided += o.decided.is_some() as u64,
                        Err(e) => out.push(agreement(e, "acceptors")),
                    }
                }
                self.enqueue(cfg, actions);
            }
            Node::Replica => {
                let part = &mut self.replica[msg.pid as usize];
                let cursor = part.delivery_cursor();
                match part.on_phase2b(msg) {
                    Ok(o) => {
                        for (k, d) in o.delivered.iter().enumerate() {
                            if d.inst != cursor + k as u32 {
                                out.push(Violation::new(
                                    ViolationKind::DeliveryOrder,
                                    format!(
                                        "replica delivered instance {} at position {}",
                                        d.inst,
                                        cursor + k as u32
                                    ),
                                ));
                            }
                        }
                    }
                    Err(e) => out.push(agreement(e, "replica")),
                }
            }
        }
    }
}

fn agreement(e: ReplicaError, at: &str) -> Violation {
    match e {
        ReplicaError::SafetyViolation {
            pid,
            inst,
            first,
            second,
        } => Violation::new(
            ViolationKind::Agreement,
            format!(
                "{at}: partition {pid} instance {inst} chose {} and {}",
                hex::encode(first),
                hex::encode(second)
            ),
        ),
        other => Violation::new(ViolationKind::Agreement, format!("{at}: {other}")),
    }
}

struct Successor {
    parent: u32,
    state: State,
    fp: u128,
    step: Step,
    violations: Vec<Violation>,
}

fn expand(cfg: &ExploreConfig, parent: u32, s: &State) -> Vec<Successor> {
    s.choices(cfg)
        .into_iter()
        .map(|(i, c)| {
            let (state, step, violations) = s.step(cfg, i, c);
            Successor {
                parent,
                fp: fingerprint(&state),
                state,
                step,
                violations,
            }
        })
        .collect()
}

/// Exhaustively explores every schedule within the bounds.
pub fn explore(cfg: &ExploreConfig) -> Result<ExploreReport, ExploreError> {
    cfg.validate()?;
    if cfg.threads == 1 {
        return run_bfs(cfg, false);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| ExploreError::Pool(e.to_string()))?;
    pool.install(|| run_bfs(cfg, true))
}

const CHUNK: usize = 1 << 14;

fn run_bfs(cfg: &ExploreConfig, parallel: bool) -> Result<ExploreReport, ExploreError> {
    let root = State::initial(cfg);
    let mut seen: HashMap<u128, ()> = HashMap::new();
    // Parent index and step for every discovered state; the root has none.
    let mut tree: Vec<(u32, Option<Step>)> = vec![(u32::MAX, None)];
    seen.insert(fingerprint(&root), ());
    let mut stats = ExploreStats {
        states: 1,
        max_decided: root.decided(),
        ..ExploreStats::default()
    };
    let mut violations = Vec::new();
    let mut frontier = vec![(0u32, root)];
    let mut depth = 0;
    while !frontier.is_empty() && violations.len() < cfg.max_violations {
        if cfg.depth.is_some_and(|d| depth >= d) {
            break;
        }
        let mut next = Vec::new();
        for chunk in frontier.chunks(CHUNK) {
            let succ: Vec<Successor> = if parallel {
                chunk
                    .par_iter()
                    .flat_map_iter(|(id, s)| expand(cfg, *id, s))
                    .collect()
            } else {
                chunk
                    .iter()
                    .flat_map(|(id, s)| expand(cfg, *id, s))
                    .collect()
            };
            stats.terminal_states +=
                chunk.iter().filter(|(_, s)| s.flight.is_empty()).count() as u64;
            for sc in succ {
                stats.transitions += 1;
                if seen.insert(sc.fp, ()).is_some() {
                    continue;
                }
                let id = tree.len() as u32;
                tree.push((sc.parent, Some(sc.step)));
                stats.states += 1;
                stats.max_decided = stats.max_decided.max(sc.state.decided());
                stats.max_depth = depth + 1;
                if !sc.violations.is_empty() {
                    let schedule = path(&tree, id);
                    for mut v in sc.violations {
                        if violations.len() < cfg.max_violations {
                            v.schedule = schedule.clone();
                            violations.push(v);
                        }
                    }
                    continue;
                }
                next.push((id, sc.state));
                if stats.states as usize > cfg.state_cap {
                    return Err(ExploreError::BoundExceeded {
                        partial: Box::new(ExploreReport { violations, stats }),
                    });
                }
            }
        }
        frontier = next;
        depth += 1;
    }
    Ok(ExploreReport { violations, stats })
}

fn path(tree: &[(u32, Option<Step>)], mut id: u32) -> Vec<Step> {
    let mut out = Vec::new();
    while let (parent, Some(step)) = tree[id as usize] {
        out.push(step);
        id = parent;
    }
    out.reverse();
    out
}

/// Re-executes a schedule from the initial state and returns the
/// violations raised along the way.
pub fn replay(cfg: &ExploreConfig, schedule: &[Step]) -> Result<Vec<Violation>, ExploreError> {
    cfg.validate()?;
    let mut s = State::initial(cfg);
    let mut found = Vec::new();
    for (k, st) in schedule.iter().enumerate() {
        let i = st.index as usize;
        let ok = s.choices(cfg).contains(&(i, st.choice))
            && s.flight.get(i).is_some_and(|f| {
                f.to == st.to && f.msg.msgtype == st.msgtype && f.msg.inst == st.inst
            });
        if !ok {
            return Err(ExploreError::BadSchedule { step: k });
        }
        let (next, _, v) = s.step(cfg, i, st.choice);
        found.extend(v);
        s = next;
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Drops on, duplication off: small enough for unoptimized builds.
    fn cfg(proposers: u8, instances: u32) -> ExploreConfig {
        ExploreConfig {
            proposers,
            instances,
            duplicate: false,
            threads: 1,
            ..ExploreConfig::default()
        }
    }

    #[test]
    fn single_proposer_failure_free() {
        let c = ExploreConfig {
            drop: false,
            ..cfg(1, 1)
        };
        let r = explore(&c).unwrap();
        assert!(r.violations.is_empty());
        assert_eq!(r.stats.max_decided, 1);
        assert!(r.stats.terminal_states > 0);
    }

    #[test]
    fn racing_proposers_one_instance() {
        let r = explore(&cfg(2, 1)).unwrap();
        assert!(r.violations.is_empty(), "{:?}", r.violations.first());
        assert_eq!(r.stats.max_decided, 1);
    }

    #[test]
    fn racing_proposers_two_instances() {
        let r = explore(&cfg(2, 2)).unwrap();
        assert!(r.violations.is_empty(), "{:?}", r.violations.first());
        assert_eq!(r.stats.max_decided, 2);
    }

    #[test]
    fn missing_promise_check_breaks_agreement() {
        let c = ExploreConfig {
            variant: Variant::NoPromise,
            max_violations: 1,
            ..cfg(2, 1)
        };
        let r = explore(&c).unwrap();
        let v = &r.violations[0];
        assert_eq!(v.kind, ViolationKind::Agreement);
        // The counterexample replays to the same finding, and only with the mutant.
        let again = replay(&c, &v.schedule).unwrap();
        assert!(again.iter().any(|x| x.kind == ViolationKind::Agreement));
        let correct = ExploreConfig {
            variant: Variant::Correct,
            ..c
        };
        assert!(replay(&correct, &v.schedule).map_or(true, |v| v.is_empty()));
    }

    #[test]
    fn strict_round_zero_never_decides() {
        let c = ExploreConfig {
            variant: Variant::StrictPhase2a,
            ..cfg(2, 1)
        };
        let r = explore(&c).unwrap();
        assert!(r.violations.is_empty());
        assert!(r.never_decides());
    }

    #[test]
    fn reduction_keeps_findings() {
        // Unreduced exploration with explicit drops against the reduced one.
        for variant in [Variant::Correct, Variant::NoPromise, Variant::StrictPhase2a] {
            let full = ExploreConfig {
                variant,
                reduce: false,
                max_violations: usize::MAX,
                ..cfg(2, 1)
            };
            let reduced = ExploreConfig {
                reduce: true,
                ..full.clone()
            };
            let a = explore(&full).unwrap();
            let b = explore(&reduced).unwrap();
            let kinds = |r: &ExploreReport| {
                r.violations
                    .iter()
                    .map(|v| v.kind)
                    .collect::<std::collections::BTreeSet<_>>()
            };
            assert_eq!(kinds(&a), kinds(&b), "{variant:?}");
            assert_eq!(a.stats.max_decided, b.stats.max_decided, "{variant:?}");
            assert!(b.stats.states <= a.stats.states);
        }
    }

    #[test]
    fn bounded_reordering_explores_fifo_prefix() {
        let c = ExploreConfig {
            max_reorder: Some(1),
            drop: false,
            ..cfg(2, 1)
        };
        let r = explore(&c).unwrap();
        assert!(r.violations.is_empty());
        assert_eq!(r.stats.max_decided, 1);
    }

    #[test]
    fn state_cap_is_reported() {
        let c = ExploreConfig {
            state_cap: 50,
            ..cfg(2, 1)
        };
        match explore(&c) {
            Err(ExploreError::BoundExceeded { partial }) => assert!(partial.stats.states > 50),
            other => panic!("expected BoundExceeded, got {other:?}"),
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let c = cfg(2, 1);
        let seq = explore(&c).unwrap();
        let par = explore(&ExploreConfig { threads: 2, ..c }).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(explore(&ExploreConfig {
            acceptors: 2,
            ..cfg(2, 1)
        })
        .is_err());
        assert!(explore(&ExploreConfig {
            instances: 4,
            ..cfg(2, 1)
        })
        .is_err());
    }
}
