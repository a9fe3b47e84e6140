//! Command-line harness: scenario runs, metrics reports, the replica
//! benchmark and the safety checker entry points.

pub mod bench;
pub mod check;
pub mod metrics;
pub mod scenario;

use std::path::PathBuf;

/// Environment variable naming the output directory.
pub const OUT_ENV: &str = "PPAXOS_OUT";
pub const DEFAULT_OUT: &str = "ppaxos-out";

pub fn out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from)
}
