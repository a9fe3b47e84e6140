//! Loading checker inputs: exploration bounds and recorded traces.

use std::fs::{self, File};
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use ppaxos_core::acceptor::Variant;
use ppaxos_core::trace::Trace;
use ppaxos_sim::checker::{validate_trace, ExploreConfig, Violation};

use crate::scenario::EXHAUSTIVE;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("parsing bounds {name}: {source}")]
    Parse {
        name: String,
        source: toml::de::Error,
    },
}

/// Acceptor defects the explorer can be pointed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutant {
    /// PHASE1A promises are not recorded.
    NoPromise,
    /// Round-0 PHASE2A is refused (`>` instead of `>=`).
    StrictPhase2a,
}

impl FromStr for Mutant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "no-promise" => Ok(Mutant::NoPromise),
            "strict-phase2a" => Ok(Mutant::StrictPhase2a),
            _ => Err(format!("unknown mutant {s:?} (no-promise, strict-phase2a)")),
        }
    }
}

impl From<Mutant> for Variant {
    fn from(m: Mutant) -> Variant {
        match m {
            Mutant::NoPromise => Variant::NoPromise,
            Mutant::StrictPhase2a => Variant::StrictPhase2a,
        }
    }
}

/// `default` names the bundled bounds; anything else is a TOML file.
pub fn load_bounds(arg: &str) -> Result<ExploreConfig, CheckError> {
    let (name, text) = if arg == "default" {
        (arg.to_string(), EXHAUSTIVE.to_string())
    } else {
        let text = fs::read_to_string(arg).map_err(|source| CheckError::Io {
            path: arg.into(),
            source,
        })?;
        (arg.to_string(), text)
    };
    toml::from_str(&text).map_err(|source| CheckError::Parse { name, source })
}

pub fn read_trace(path: &Path) -> Result<Trace, CheckError> {
    let io_err = |source| CheckError::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = File::open(path).map_err(io_err)?;
    Trace::read_jsonl(BufReader::new(f)).map_err(io_err)
}

pub fn validate_file(path: &Path) -> Result<Vec<Violation>, CheckError> {
    Ok(validate_trace(&read_trace(path)?))
}

/// Every `<dir>/*/trace.jsonl`, sorted.
pub fn traces_under(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path().join("trace.jsonl"))
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    out
}
