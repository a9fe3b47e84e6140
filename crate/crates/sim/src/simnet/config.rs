use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use ppaxos_core::kvapp::{BackendKind, FsyncPolicy};
use ppaxos_core::proposer::duration_us;
use ppaxos_core::trace::DeviceId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONTROLLER: DeviceId = 0;
pub const PRIMARY: DeviceId = 1;
pub const BACKUP_BASE: DeviceId = 2;
pub const ACCEPTOR_BASE: DeviceId = 10;
pub const REPLICA_BASE: DeviceId = 40;
pub const PROPOSER_BASE: DeviceId = 100;

const MAX_BACKUPS: usize = (ACCEPTOR_BASE - BACKUP_BASE) as usize;
const MAX_ACCEPTORS: usize = (REPLICA_BASE - ACCEPTOR_BASE) as usize;
const MAX_REPLICAS: usize = (PROPOSER_BASE - REPLICA_BASE) as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid workload: {0}")]
    Workload(String),
}

/// A device named by role and index, e.g. `acceptor:1`, `backup:0`,
/// `primary`, `controller`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DeviceRef {
    Controller,
    Primary,
    Backup(u16),
    Acceptor(u16),
    Replica(u16),
    Proposer(u16),
}

impl DeviceRef {
    pub fn id(self) -> DeviceId {
        match self {
            DeviceRef::Controller => CONTROLLER,
            DeviceRef::Primary => PRIMARY,
            DeviceRef::Backup(i) => BACKUP_BASE + i,
            DeviceRef::Acceptor(i) => ACCEPTOR_BASE + i,
            DeviceRef::Replica(i) => REPLICA_BASE + i,
            DeviceRef::Proposer(i) => PROPOSER_BASE + i,
        }
    }

    pub fn from_id(id: DeviceId) -> DeviceRef {
        match id {
            CONTROLLER => DeviceRef::Controller,
            PRIMARY => DeviceRef::Primary,
            i if i < ACCEPTOR_BASE => DeviceRef::Backup(i - BACKUP_BASE),
            i if i < REPLICA_BASE => DeviceRef::Acceptor(i - ACCEPTOR_BASE),
            i if i < PROPOSER_BASE => DeviceRef::Replica(i - REPLICA_BASE),
            i => DeviceRef::Proposer(i - PROPOSER_BASE),
        }
    }
}

impl fmt::Display for DeviceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceRef::Controller => write!(f, "controller"),
            DeviceRef::Primary => write!(f, "primary"),
            DeviceRef::Backup(i) => write!(f, "backup:{i}"),
            DeviceRef::Acceptor(i) => write!(f, "acceptor:{i}"),
            DeviceRef::Replica(i) => write!(f, "replica:{i}"),
            DeviceRef::Proposer(i) => write!(f, "proposer:{i}"),
        }
    }
}

impl FromStr for DeviceRef {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError::UnknownDevice(s.to_string());
        let (role, idx) = match s.split_once(':') {
            Some((r, i)) => (r, Some(i.parse::<u16>().map_err(|_| bad())?)),
            None => (s, None),
        };
        Ok(match (role, idx) {
            ("controller", None) => DeviceRef::Controller,
            ("primary", None) => DeviceRef::Primary,
            ("backup", Some(i)) => DeviceRef::Backup(i),
            ("acceptor", Some(i)) => DeviceRef::Acceptor(i),
            ("replica", Some(i)) => DeviceRef::Replica(i),
            ("proposer", Some(i)) => DeviceRef::Proposer(i),
            _ => return Err(bad()),
        })
    }
}

impl TryFrom<String> for DeviceRef {
    type Error = ConfigError;

    fn try_from(s: String) -> Result<Self, ConfigError> {
        s.parse()
    }
}

impl From<DeviceRef> for String {
    fn from(d: DeviceRef) -> String {
        d.to_string()
    }
}

/// Device counts, link latency and per-role service times. Links form a
/// full mesh, so every proposer has a path to every leader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Topology {
    pub acceptors: usize,
    pub replicas: usize,
    pub backups: usize,
    /// Acceptor ring capacity per partition.
    pub log_capacity: u32,
    pub trim_threshold: f64,
    pub link_base_ns: u64,
    pub link_jitter_ns: u64,
    pub leader_service_ns: u64,
    pub backup_service_ns: u64,
    pub acceptor_service_ns: u64,
    pub replica_service_ns: u64,
    /// Application time per executed command.
    pub exec_ns: u64,
    pub controller_service_ns: u64,
    /// Interval between a replica's checks for undelivered holes.
    pub gap_check_us: u64,
    /// Minimum time between two controller reroutes.
    pub hold_down_us: u64,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            acceptors: 3,
            replicas: 3,
            backups: 1,
            log_capacity: 1024,
            trim_threshold: 0.5,
            link_base_ns: 5_000,
            link_jitter_ns: 1_000,
            leader_service_ns: 100,
            backup_service_ns: 4_000,
            acceptor_service_ns: 100,
            replica_service_ns: 500,
            exec_ns: 20_000,
            controller_service_ns: 1_000,
            gap_check_us: 1_000,
            hold_down_us: 10_000,
        }
    }
}

impl Topology {
    pub fn acceptor_ids(&self) -> impl Iterator<Item = DeviceId> + '_ {
        (0..self.acceptors as u16).map(|i| ACCEPTOR_BASE + i)
    }

    pub fn replica_ids(&self) -> impl Iterator<Item = DeviceId> + '_ {
        (0..self.replicas as u16).map(|i| REPLICA_BASE + i)
    }

    /// Devices able to host leader logic, primary first.
    pub fn leader_ids(&self) -> impl Iterator<Item = DeviceId> + '_ {
        std::iter::once(PRIMARY).chain((0..self.backups as u16).map(|i| BACKUP_BASE + i))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError::Topology(m.to_string()));
        if self.acceptors == 0 || self.acceptors.is_multiple_of(2) {
            return err("acceptor count must be odd");
        }
        if self.acceptors > MAX_ACCEPTORS
            || self.replicas > MAX_REPLICAS
            || self.backups > MAX_BACKUPS
        {
            return err("too many devices of one role");
        }
        if self.replicas == 0 {
            return err("at least one replica");
        }
        if self.backups == 0 {
            return err("at least one backup leader");
        }
        if self.log_capacity == 0 {
            return err("log capacity must be positive");
        }
        if !(self.trim_threshold > 0.0 && self.trim_threshold <= 1.0) {
            return err("trim threshold must be in (0, 1]");
        }
        if self.link_base_ns == 0 {
            return err("links need a positive latency");
        }
        Ok(())
    }
}

/// Channel faults applied independently to every packet.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultModel {
    pub drop: f64,
    pub duplicate: f64,
    /// Extra uniform delay in `[0, reorder_ns]`, letting packets overtake.
    pub reorder_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    /// Closed-loop clients, one proposer each.
    pub clients: usize,
    /// Total requests submitted across clients.
    pub messages: u64,
    /// Virtual-time cap.
    pub duration_ms: u64,
    pub put_ratio: f64,
    pub multi_shard_fraction: f64,
    pub value_size: usize,
    pub key_range: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            clients: 8,
            messages: 10_000,
            duration_ms: 2_000,
            put_ratio: 0.9,
            multi_shard_fraction: 0.0,
            value_size: 16,
            key_range: 1 << 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultAction {
    FailDevice {
        device: DeviceRef,
    },
    /// Disables the link in both directions unless `one_way`.
    FailLink {
        from: DeviceRef,
        to: DeviceRef,
        #[serde(default)]
        one_way: bool,
    },
    Reroute {
        to: DeviceRef,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledFault {
    pub at_us: u64,
    #[serde(flatten)]
    pub action: FaultAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub partitions: u16,
    pub topology: Topology,
    pub faults: FaultModel,
    pub workload: Workload,
    pub schedule: Vec<ScheduledFault>,
    #[serde(with = "duration_us")]
    pub retry_timeout: Duration,
    pub max_retries: u32,
    pub backend: BackendKind,
    pub fsync: FsyncPolicy,
    /// Root for file-backed shards; required with that backend.
    #[serde(skip)]
    pub storage_dir: Option<PathBuf>,
    /// Record SEND and DELIVER events (drops are always recorded).
    pub record_network: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            partitions: 1,
            topology: Topology::default(),
            faults: FaultModel::default(),
            workload: Workload::default(),
            schedule: Vec::new(),
            retry_timeout: Duration::from_millis(10),
            max_retries: 3,
            backend: BackendKind::InMemory,
            fsync: FsyncPolicy::default(),
            storage_dir: None,
            record_network: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.topology.validate()?;
        let w = &self.workload;
        let bad = |m: &str| Err(ConfigError::Workload(m.to_string()));
        if self.partitions == 0 {
            return bad("at least one partition");
        }
        if w.clients == 0 || w.clients > (u16::MAX - PROPOSER_BASE) as usize {
            return bad("client count out of range");
        }
        if !(0.0..=1.0).contains(&w.put_ratio) || !(0.0..=1.0).contains(&w.multi_shard_fraction) {
            return bad("ratios must be in [0, 1]");
        }
        if (w.key_range as u128) < self.partitions as u128 {
            return bad("key range smaller than the partition count");
        }
        if !(0.0..1.0).contains(&self.faults.drop) || !(0.0..1.0).contains(&self.faults.duplicate) {
            return bad("fault probabilities must be in [0, 1)");
        }
        if self.max_retries == 0 || self.retry_timeout.is_zero() {
            return bad("retries need a positive timeout and count");
        }
        if self.backend == BackendKind::FileBacked && self.storage_dir.is_none() {
            return bad("file-backed storage needs a directory");
        }
        for f in &self.schedule {
            let refs: Vec<DeviceRef> = match &f.action {
                FaultAction::FailDevice { device } => vec![*device],
                FaultAction::FailLink { from, to, .. } => vec![*from, *to],
                FaultAction::Reroute { to } => {
                    if !matches!(to, DeviceRef::Primary | DeviceRef::Backup(_)) {
                        return Err(ConfigError::Topology(format!("{to} cannot host a leader")));
                    }
                    vec![*to]
                }
            };
            for r in refs {
                if !self.exists(r) {
                    return Err(ConfigError::UnknownDevice(r.to_string()));
                }
            }
        }
        Ok(())
    }

    pub fn exists(&self, d: DeviceRef) -> bool {
        let t = &self.topology;
        match d {
            DeviceRef::Controller | DeviceRef::Primary => true,
            DeviceRef::Backup(i) => (i as usize) < t.backups,
            DeviceRef::Acceptor(i) => (i as usize) < t.acceptors,
            DeviceRef::Replica(i) => (i as usize) < t.replicas,
            DeviceRef::Proposer(i) => (i as usize) < self.workload.clients,
        }
    }
}
