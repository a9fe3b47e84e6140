//! Run metrics: decided throughput per 50 ms bucket, latency percentiles,
//! per-partition decided counts and fault markers.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ppaxos_core::trace::{DeviceId, EventKind, Trace};
use ppaxos_core::wire::PartitionId;

pub const BUCKET_MS: u64 = 50;
pub const BUCKET_NS: u64 = BUCKET_MS * 1_000_000;

const CSV_HEADER: [&str; 5] = ["bucket", "start_ms", "end_ms", "decided", "completed"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which clock latencies were measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencyClock {
    Virtual,
    WallClock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Percentiles {
    pub samples: u64,
    pub p50_ns: u64,
    pub p75_ns: u64,
    pub p99_ns: u64,
}

impl Percentiles {
    /// Nearest-rank percentiles; `None` without samples.
    pub fn from_samples(mut v: Vec<u64>) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        v.sort_unstable();
        let rank = |p: u64| {
            let k = (p * v.len() as u64).div_ceil(100).max(1);
            v[k as usize - 1]
        };
        Some(Percentiles {
            samples: v.len() as u64,
            p50_ns: rank(50),
            p75_ns: rank(75),
            p99_ns: rank(99),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub index: u64,
    /// DECIDE events in the bucket.
    pub decided: u64,
    /// Client completions in the bucket.
    pub completed: u64,
}

impl Bucket {
    pub fn start_ms(&self) -> u64 {
        self.index * BUCKET_MS
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Marker {
    Fail {
        t_ns: u64,
        device: DeviceId,
    },
    FailLink {
        t_ns: u64,
        from: DeviceId,
        to: DeviceId,
    },
    Reroute {
        t_ns: u64,
        from: DeviceId,
        to: DeviceId,
        retries: Option<u32>,
    },
}

impl Marker {
    pub fn t_ns(&self) -> u64 {
        match *self {
            Marker::Fail { t_ns, .. }
            | Marker::FailLink { t_ns, .. }
            | Marker::Reroute { t_ns, .. } => t_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub bucket_ms: u64,
    pub duration_ns: u64,
    pub latency_clock: LatencyClock,
    pub latency: Option<Percentiles>,
    pub decided_total: u64,
    pub decided_per_partition: BTreeMap<PartitionId, u64>,
    pub completed_total: u64,
    pub throughput: Vec<Bucket>,
    pub markers: Vec<Marker>,
}

pub fn bucket_count(duration_ns: u64) -> usize {
    duration_ns.div_ceil(BUCKET_NS) as usize
}

impl MetricsReport {
    pub fn empty(scenario: impl Into<String>, latency_clock: LatencyClock) -> Self {
        MetricsReport {
            scenario: scenario.into(),
            seed: 0,
            bucket_ms: BUCKET_MS,
            duration_ns: 0,
            latency_clock,
            latency: None,
            decided_total: 0,
            decided_per_partition: BTreeMap::new(),
            completed_total: 0,
            throughput: Vec::new(),
            markers: Vec::new(),
        }
    }

    /// Builds the report of a simulator run lasting `duration_ns`.
    pub fn from_trace(
        scenario: impl Into<String>,
        seed: u64,
        trace: &Trace,
        duration_ns: u64,
    ) -> Self {
        let mut r = MetricsReport::empty(scenario, LatencyClock::Virtual);
        r.seed = seed;
        r.duration_ns = duration_ns;
        let n = bucket_count(duration_ns);
        r.throughput = (0..n as u64)
            .map(|index| Bucket {
                index,
                decided: 0,
                completed: 0,
            })
            .collect();
        let slot = |t: u64| ((t / BUCKET_NS) as usize).min(n.saturating_sub(1));
        let mut latencies = Vec::new();
        for e in trace.iter() {
            match &e.kind {
                EventKind::Decide { pid, .. } => {
                    r.decided_total += 1;
                    *r.decided_per_partition.entry(*pid).or_default() += 1;
                    if n > 0 {
                        r.throughput[slot(e.t)].decided += 1;
                    }
                }
                EventKind::Complete { latency_ns, .. } => {
                    r.completed_total += 1;
                    latencies.push(*latency_ns);
                    if n > 0 {
                        r.throughput[slot(e.t)].completed += 1;
                    }
                }
                EventKind::Fail { device } => r.markers.push(Marker::Fail {
                    t_ns: e.t,
                    device: *device,
                }),
                EventKind::FailLink { from, to } => r.markers.push(Marker::FailLink {
                    t_ns: e.t,
                    from: *from,
                    to: *to,
                }),
                EventKind::Reroute {
                    from, to, retries, ..
                } => r.markers.push(Marker::Reroute {
                    t_ns: e.t,
                    from: *from,
                    to: *to,
                    retries: *retries,
                }),
                _ => {}
            }
        }
        r.latency = Percentiles::from_samples(latencies);
        r
    }

    pub fn decided_series(&self) -> Vec<u64> {
        self.throughput.iter().map(|b| b.decided).collect()
    }

    /// Index of the bucket holding virtual time `t_ns`.
    pub fn bucket_of(&self, t_ns: u64) -> usize {
        (t_ns / (self.bucket_ms * 1_000_000)) as usize
    }

    pub fn first_failure_ns(&self) -> Option<u64> {
        self.markers
            .iter()
            .find(|m| matches!(m, Marker::Fail { .. } | Marker::FailLink { .. }))
            .map(Marker::t_ns)
    }

    pub fn first_reroute(&self) -> Option<&Marker> {
        self.markers
            .iter()
            .find(|m| matches!(m, Marker::Reroute { .. }))
    }

    /// Time series only: one row per bucket.
    pub fn write_csv(&self, w: impl Write) -> Result<(), ReportError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for b in &self.throughput {
            out.write_record([
                b.index.to_string(),
                b.start_ms().to_string(),
                (b.start_ms() + self.bucket_ms).to_string(),
                b.decided.to_string(),
                b.completed.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Writes `report.<ext>` into `dir` and returns the path.
    pub fn emit(&self, format: ReportFormat, dir: &Path) -> Result<PathBuf, ReportError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("report.{}", format.extension()));
        let body = match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        };
        std::fs::write(&path, body)?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown format {s:?} (csv, json)")),
        }
    }
}
