//! Replica throughput benchmark. Drives the multi-threaded router, workers
//! and key-value shards directly with already-decided PHASE2B votes, so the
//! numbers reflect execution only.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use ppaxos_core::envelope::{self, RequestId};
use ppaxos_core::kvapp::{BackendKind, FsyncPolicy, KvCommand, ShardStore};
use ppaxos_core::proposer::KeySpace;
use ppaxos_core::replica::{DeliveredCommand, EngineConfig, ReplicaEngine, ReplicaError, ShardApp};
use ppaxos_core::wire::{MsgType, PartitionId, PaxosMessage};

use crate::metrics::{LatencyClock, Percentiles};

const KEY_RANGE: u64 = 1 << 32;
const ACCEPTORS: usize = 3;
/// Distinct keys written per shard.
const KEYS_PER_SHARD: u64 = 4096;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bench needs 1 to 4 partitions, got {0}")]
    Partitions(u16),
    #[error("file-backed bench needs a storage directory")]
    NoStorage,
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("opening shard: {0}")]
    Kv(#[from] ppaxos_core::kvapp::KvError),
    #[error(transparent)]
    Replica(#[from] ReplicaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub partitions: u16,
    pub backend: BackendKind,
    pub messages: u64,
    pub runs: usize,
    pub value_size: usize,
    pub fsync: FsyncPolicy,
    /// Root for file-backed shards; wiped before each run.
    pub dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            partitions: 1,
            backend: BackendKind::InMemory,
            messages: 100_000,
            runs: 3,
            value_size: 16,
            fsync: FsyncPolicy::default(),
            dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub elapsed_ns: u64,
    pub msgs_per_sec: f64,
    pub latency: Option<Percentiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub partitions: u16,
    pub backend: BackendKind,
    pub messages: u64,
    pub latency_clock: LatencyClock,
    pub runs: Vec<BenchRun>,
}

impl BenchReport {
    /// Median throughput across runs.
    pub fn msgs_per_sec(&self) -> f64 {
        let mut v: Vec<f64> = self.runs.iter().map(|r| r.msgs_per_sec).collect();
        v.sort_by(f64::total_cmp);
        v.get(v.len() / 2).copied().unwrap_or(0.0)
    }
}

/// Shard wrapper recording when each command finished executing.
struct TimedShard {
    store: ShardStore,
    done: Vec<Instant>,
}

impl ShardApp for TimedShard {
    fn execute(&mut self, cmd: &DeliveredCommand) -> Bytes {
        let r = self.store.execute(cmd);
        self.done.push(Instant::now());
        r
    }

    fn execute_multi(shards: &mut [(PartitionId, Self)], cmd: &DeliveredCommand) -> Bytes {
        let mut inner: Vec<(PartitionId, ShardStore)> = shards
            .iter_mut()
            .map(|(p, s)| {
                let keys = KeySpace::new(1, 1).expect("valid");
                (
                    *p,
                    std::mem::replace(&mut s.store, ShardStore::in_memory(*p, keys)),
                )
            })
            .collect();
        let r = ShardStore::execute_multi(&mut inner, cmd);
        let now = Instant::now();
        for ((_, s), (_, store)) in shards.iter_mut().zip(inner) {
            s.store = store;
            s.done.push(now);
        }
        r
    }
}

/// Pre-built votes: command `i` goes to partition `i % P`.
fn workload(cfg: &BenchConfig) -> Vec<[PaxosMessage; 2]> {
    let p = cfg.partitions as u64;
    let span = KEY_RANGE / p;
    let value = vec![0x5a; cfg.value_size];
    (0..cfg.messages)
        .map(|i| {
            let pid = (i % p) as PartitionId;
            let inst = (i / p) as u32;
            let key = pid as u64 * span + (i / p) % KEYS_PER_SHARD;
            let cmd = KvCommand::put(key, value.clone(), i).encode();
            let v = envelope::encode_command(RequestId::new(0, i), None, &cmd);
            [0u16, 1].map(|a| PaxosMessage {
                msgtype: MsgType::Phase2b,
                inst,
                rnd: 0,
                vrnd: 0,
                swid: 10 + a,
                pid,
                value: v.clone(),
            })
        })
        .collect()
}

fn one_run(cfg: &BenchConfig, votes: &[[PaxosMessage; 2]]) -> Result<BenchRun, BenchError> {
    let p = cfg.partitions;
    let keys = KeySpace::new(p, KEY_RANGE).expect("valid key space");
    if let (BackendKind::FileBacked, Some(d)) = (cfg.backend, &cfg.dir) {
        let _ = fs::remove_dir_all(d);
        fs::create_dir_all(d)?;
    }
    let shards = (0..p)
        .map(|pid| {
            let store = match cfg.backend {
                BackendKind::InMemory => ShardStore::in_memory(pid, keys),
                BackendKind::FileBacked => {
                    let dir = cfg.dir.as_deref().ok_or(BenchError::NoStorage)?;
                    ShardStore::file_backed(pid, keys, dir, cfg.fsync)?
                }
            };
            Ok(TimedShard {
                store,
                done: Vec::with_capacity(votes.len() / p as usize + 1),
            })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    let config = EngineConfig {
        partitions: p,
        acceptors: ACCEPTORS,
        ..EngineConfig::default()
    };
    let mut engine = ReplicaEngine::start(config, shards)?;
    let mut pushed = Vec::with_capacity(votes.len());
    let start = Instant::now();
    for [a, b] in votes {
        engine.push(a.clone());
        engine.push(b.clone());
        pushed.push(Instant::now());
    }
    let reports = engine.finish()?;
    let elapsed = start.elapsed();
    let mut samples = Vec::with_capacity(votes.len());
    for r in &reports {
        for (inst, t) in r.shard.done.iter().enumerate() {
            let i = inst * p as usize + r.pid as usize;
            samples.push(t.saturating_duration_since(pushed[i]).as_nanos() as u64);
        }
    }
    let secs = elapsed.as_secs_f64().max(1e-9);
    Ok(BenchRun {
        elapsed_ns: elapsed.as_nanos() as u64,
        msgs_per_sec: votes.len() as f64 / secs,
        latency: Percentiles::from_samples(samples),
    })
}

pub fn bench_replica(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    if !(1..=4).contains(&cfg.partitions) {
        return Err(BenchError::Partitions(cfg.partitions));
    }
    if cfg.backend == BackendKind::FileBacked && cfg.dir.is_none() {
        return Err(BenchError::NoStorage);
    }
    let votes = workload(cfg);
    let runs = (0..cfg.runs.max(1))
        .map(|_| one_run(cfg, &votes))
        .collect::<Result<_, _>>()?;
    if let (BackendKind::FileBacked, Some(d)) = (cfg.backend, &cfg.dir) {
        let _ = fs::remove_dir_all(d);
    }
    Ok(BenchReport {
        partitions: cfg.partitions,
        backend: cfg.backend,
        messages: cfg.messages,
        latency_clock: LatencyClock::WallClock,
        runs,
    })
}
