//! Multi-threaded replica: a router feeding one worker thread per shard
//! through single-producer/single-consumer rings. Each worker owns its
//! partition's learner state and application shard.

use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use bytes::Bytes;

use crate::envelope::RequestId;
use crate::wire::{PartitionId, PaxosMessage};

use super::barrier::MultiShardBarrier;
use super::partition::{DeliveredCommand, ReplicaPartition, DEFAULT_TRIM_THRESHOLD};
use super::router::{WorkerQueue, WorkerRouter, DEFAULT_BATCH_SIZE};
use super::ReplicaError;

/// Application callback contract. One value per shard, owned by that
/// shard's worker.
pub trait ShardApp: Send + 'static {
    /// Executes a single-shard command delivered in instance order.
    fn execute(&mut self, cmd: &DeliveredCommand) -> Bytes;

    /// Executes a multi-shard command once, against every involved shard.
    fn execute_multi(shards: &mut [(PartitionId, Self)], cmd: &DeliveredCommand) -> Bytes
    where
        Self: Sized;
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub partitions: u16,
    pub acceptors: usize,
    /// Acceptor ring capacity, used for the TRIM cadence.
    pub log_capacity: u32,
    pub trim_threshold: f64,
    pub queue_capacity: usize,
    pub batch_size: usize,
    pub barrier_timeout: Duration,
    /// Keep a per-worker record of every delivery.
    pub record: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            partitions: 1,
            acceptors: 3,
            log_capacity: 1 << 16,
            trim_threshold: DEFAULT_TRIM_THRESHOLD,
            queue_capacity: 1 << 14,
            batch_size: DEFAULT_BATCH_SIZE,
            barrier_timeout: Duration::from_secs(5),
            record: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionRecord {
    pub inst: u32,
    pub request: Option<RequestId>,
    pub multi_shard: Option<Vec<PartitionId>>,
    /// This worker ran the command (always true for single-shard).
    pub executor: bool,
    pub response: Option<Bytes>,
}

pub struct WorkerReport<S> {
    pub pid: PartitionId,
    pub shard: S,
    pub delivered: u64,
    pub executed: u64,
    pub trims: Vec<PaxosMessage>,
    pub records: Vec<ExecutionRecord>,
}

pub struct ReplicaEngine<S: ShardApp> {
    router: WorkerRouter,
    workers: Vec<JoinHandle<Result<WorkerReport<S>, ReplicaError>>>,
}

impl<S: ShardApp> ReplicaEngine<S> {
    /// Spawns one worker per partition; `shards[i]` serves partition `i`.
    pub fn start(config: EngineConfig, shards: Vec<S>) -> Result<Self, ReplicaError> {
        if config.partitions == 0 || shards.len() != config.partitions as usize {
            return Err(ReplicaError::Config("need exactly one shard per partition"));
        }
        let workers = config.partitions as usize;
        let (router, queues) = WorkerRouter::new(workers, config.queue_capacity, config.batch_size);
        let barrier = Arc::new(MultiShardBarrier::new(config.barrier_timeout));
        let handles = queues
            .into_iter()
            .zip(shards)
            .map(|(queue, shard)| {
                let pid = queue.index() as PartitionId;
                let worker = Worker {
                    partition: ReplicaPartition::new(
                        pid,
                        config.acceptors,
                        config.log_capacity,
                        config.trim_threshold,
                    ),
                    queue,
                    shard: Some(shard),
                    barrier: barrier.clone(),
                    record: config.record,
                    delivered: 0,
                    executed: 0,
                    trims: Vec::new(),
                    records: Vec::new(),
                };
                thread::Builder::new()
                    .name(format!("replica-worker-{pid}"))
                    .spawn(move || worker.run())
                    .expect("spawning worker thread")
            })
            .collect();
        Ok(ReplicaEngine {
            router,
            workers: handles,
        })
    }

    /// Routes a PHASE2B to its worker, waiting while the ring is full.
    pub fn push(&mut self, mut m: PaxosMessage) {
        loop {
            match self.router.route(m) {
                Ok(_) => return,
                Err(full) => {
                    m = full.msg;
                    thread::yield_now();
                }
            }
        }
    }

    pub fn router(&mut self) -> &mut WorkerRouter {
        &mut self.router
    }

    /// Closes the rings and waits for every worker to drain.
    pub fn finish(self) -> Result<Vec<WorkerReport<S>>, ReplicaError> {
        drop(self.router);
        self.workers
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    }
}

struct Worker<S> {
    partition: ReplicaPartition,
    queue: WorkerQueue,
    shard: Option<S>,
    barrier: Arc<MultiShardBarrier<S>>,
    record: bool,
    delivered: u64,
    executed: u64,
    trims: Vec<PaxosMessage>,
    records: Vec<ExecutionRecord>,
}

impl<S: ShardApp> Worker<S> {
    fn run(mut self) -> Result<WorkerReport<S>, ReplicaError> {
        let mut batch = Vec::new();
        loop {
            if self.queue.pop_batch(&mut batch) == 0 {
                if self.queue.is_finished() {
                    break;
                }
                thread::yield_now();
                continue;
            }
            for m in batch.drain(..) {
                let out = self.partition.on_phase2b(&m)?;
                for cmd in out.delivered {
                    self.deliver(cmd)?;
                }
                if let Some(t) = self.partition.maybe_trim() {
                    self.trims.push(t);
                }
            }
        }
        Ok(WorkerReport {
            pid: self.partition.pid(),
            shard: self
                .shard
                .take()
                .expect("shard returned after every barrier"),
            delivered: self.delivered,
            executed: self.executed,
            trims: self.trims,
            records: self.records,
        })
    }

    fn deliver(&mut self, cmd: DeliveredCommand) -> Result<(), ReplicaError> {
        self.delivered += 1;
        if cmd.noop {
            return Ok(());
        }
        let me = self.partition.pid();
        let (executor, response) = match &cmd.multi_shard {
            Some(shards) if shards.len() > 1 => {
                let key = cmd.request.map_or(cmd.inst as u64, |r| r.0);
                let state = self.shard.take().expect("shard present");
                let (state, result) = self.barrier.rendezvous(key, me, shards, state, |states| {
                    S::execute_multi(states, &cmd)
                });
                self.shard = Some(state);
                let response = result?;
                (response.is_some(), response)
            }
            _ => {
                let shard = self.shard.as_mut().expect("shard present");
                (true, Some(shard.execute(&cmd)))
            }
        };
        if executor {
            self.executed += 1;
        }
        if self.record {
            self.records.push(ExecutionRecord {
                inst: cmd.inst,
                request: cmd.request,
                multi_shard: cmd.multi_shard,
                executor,
                response,
            });
        }
        Ok(())
    }
}
