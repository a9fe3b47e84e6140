//! Learner side: per-partition quorum detection and in-order delivery, the
//! worker router, the multi-shard barrier and the threaded engine.

mod barrier;
mod engine;
mod order;
mod partition;
mod router;

use bytes::Bytes;
use thiserror::Error;

use crate::wire::{Instance, MsgType, PartitionId};

pub use barrier::MultiShardBarrier;
pub use engine::{EngineConfig, ExecutionRecord, ReplicaEngine, ShardApp, WorkerReport};
pub use order::{cross_shard_order, OrderVerdict};
pub use partition::{
    Decision, DeliveredCommand, PhaseTwoOutcome, ReplicaPartition, DEFAULT_TRIM_THRESHOLD,
};
pub use router::{worker_for, QueueFull, WorkerQueue, WorkerRouter, DEFAULT_BATCH_SIZE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplicaError {
    #[error("replica does not handle {0}")]
    Unexpected(MsgType),
    #[error("message for partition {got} routed to partition {expected}")]
    WrongPartition {
        expected: PartitionId,
        got: PartitionId,
    },
    #[error(
        "two values chosen for partition {pid} instance {inst}: {} vs {}",
        hex::encode(first),
        hex::encode(second)
    )]
    SafetyViolation {
        pid: PartitionId,
        inst: Instance,
        first: Bytes,
        second: Bytes,
    },
    #[error("multi-shard barrier {key} timed out waiting for {missing:?}")]
    BarrierTimeout { key: u64, missing: Vec<u16> },
    #[error("invalid replica configuration: {0}")]
    Config(&'static str),
}
