//! Safety checking: trace validation for simulator runs and a bounded
//! exhaustive explorer over message schedules.

mod explore;
mod validate;

use serde::{Deserialize, Serialize};

pub use explore::{
    explore, replay, Choice, ExploreConfig, ExploreError, ExploreReport, ExploreStats, Node, Step,
};
pub use validate::validate_trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationKind {
    /// Two different values decided for one instance.
    Agreement,
    /// A replica delivered out of instance order or skipped one.
    DeliveryOrder,
    /// Multi-shard requests ordered inconsistently across partitions.
    Acyclicity,
    /// An acceptor changed its vote within a round or voted below it.
    VoteMutation,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
    /// Steps from the initial state, for explorer findings; empty for traces.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<Step>,
}

impl Violation {
    pub fn new(kind: ViolationKind, detail: impl Into<String>) -> Self {
        Violation {
            kind,
            detail: detail.into(),
            schedule: Vec::new(),
        }
    }
}
