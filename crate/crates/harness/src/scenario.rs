//! Scenario files: a TOML simulator configuration named after its file.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use ppaxos_core::kvapp::BackendKind;
use ppaxos_core::trace::Trace;
use ppaxos_sim::checker::{validate_trace, Violation};
use ppaxos_sim::simnet::{self, ConfigError, SimConfig, SimError, SimStats};

use crate::metrics::{MetricsReport, ReportError, ReportFormat};

macro_rules! bundle {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../../scenarios/", $name, ".toml")))),*]
    };
}

/// Scenario files shipped in `scenarios/`, embedded at build time.
pub const BUNDLED: &[(&str, &str)] = bundle!(
    "baseline-1p",
    "baseline-4p",
    "acceptor-fail",
    "acceptor-fail-2",
    "leader-fail",
    "multi-shard",
    "lossy",
    "concurrent-leaders",
    "trim",
);

/// The exhaustive checker configuration shipped alongside the scenarios.
pub const EXHAUSTIVE: &str = include_str!("../../../scenarios/exhaustive.toml");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("no scenario file or bundled scenario named {0:?}")]
    Unknown(String),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("parsing scenario {name}: {source}")]
    Parse {
        name: String,
        source: toml::de::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub config: SimConfig,
}

impl Scenario {
    pub fn parse(name: &str, text: &str) -> Result<Self, ScenarioError> {
        let config: SimConfig = toml::from_str(text).map_err(|source| ScenarioError::Parse {
            name: name.to_string(),
            source,
        })?;
        config.validate()?;
        Ok(Scenario {
            name: name.to_string(),
            config,
        })
    }

    pub fn bundled(name: &str) -> Option<Result<Self, ScenarioError>> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, text)| Scenario::parse(n, text))
    }

    pub fn all_bundled() -> Vec<Scenario> {
        BUNDLED
            .iter()
            .map(|(n, text)| Scenario::parse(n, text).expect("bundled scenarios parse"))
            .collect()
    }

    /// A path to a scenario file, or the name of a bundled scenario.
    pub fn load(arg: &str) -> Result<Self, ScenarioError> {
        let path = Path::new(arg);
        if path.is_file() {
            let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let name = path.file_stem().map_or(arg.into(), |s| s.to_string_lossy());
            return Scenario::parse(&name, &text);
        }
        Scenario::bundled(arg).unwrap_or_else(|| Err(ScenarioError::Unknown(arg.to_string())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.config).expect("config serializes")
    }
}

pub struct RunOutput {
    pub report: MetricsReport,
    pub trace: Trace,
    pub stats: SimStats,
    pub violations: Vec<Violation>,
}

/// Runs a scenario and validates its trace. With `out` set, the trace,
/// both report formats and any violations go to `out/<name>/`; file-backed
/// shards are stored under `out/<name>/storage`.
pub fn run_scenario(s: &Scenario, out: Option<&Path>) -> Result<RunOutput, RunError> {
    let dir = out.map(|o| o.join(&s.name));
    let mut cfg = s.config.clone();
    let scratch;
    if cfg.backend == BackendKind::FileBacked && cfg.storage_dir.is_none() {
        cfg.storage_dir = Some(match &dir {
            Some(d) => {
                let storage = d.join("storage");
                // Stale logs would be replayed into the new run.
                let _ = fs::remove_dir_all(&storage);
                storage
            }
            None => {
                scratch =
                    std::env::temp_dir().join(format!("ppaxos-{}-{}", s.name, std::process::id()));
                let _ = fs::remove_dir_all(&scratch);
                scratch.clone()
            }
        });
    }
    let outcome = simnet::run(&cfg)?;
    let violations = validate_trace(&outcome.trace);
    let report = MetricsReport::from_trace(&s.name, cfg.seed, &outcome.trace, outcome.stats.end_ns);
    if let Some(d) = &dir {
        write_outputs(d, &report, &outcome.trace, &violations)?;
    }
    Ok(RunOutput {
        report,
        trace: outcome.trace,
        stats: outcome.stats,
        violations,
    })
}

fn write_outputs(
    dir: &Path,
    report: &MetricsReport,
    trace: &Trace,
    violations: &[Violation],
) -> Result<(), RunError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tp = dir.join("trace.jsonl");
    let mut w = BufWriter::new(fs::File::create(&tp).map_err(io_err(&tp))?);
    trace.write_jsonl(&mut w).map_err(io_err(&tp))?;
    w.flush().map_err(io_err(&tp))?;
    report.emit(ReportFormat::Json, dir)?;
    report.emit(ReportFormat::Csv, dir)?;
    let vp = dir.join("violations.jsonl");
    let mut body = String::new();
    for v in violations {
        body.push_str(&serde_json::to_string(v).expect("violation serializes"));
        body.push('\n');
    }
    fs::write(&vp, body).map_err(io_err(&vp))?;
    Ok(())
}
