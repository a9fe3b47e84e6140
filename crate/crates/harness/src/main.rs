use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ppaxos_core::kvapp::BackendKind;
use ppaxos_harness::bench::{bench_replica, BenchConfig};
use ppaxos_harness::check::{self, Mutant};
use ppaxos_harness::metrics::{MetricsReport, ReportFormat};
use ppaxos_harness::scenario::{self, Scenario};
use ppaxos_harness::{out_dir, OUT_ENV};
use ppaxos_sim::checker::{explore, ExploreError, Violation};

#[derive(Parser)]
#[command(
    name = "ppaxos",
    about = "Partitioned multi-Paxos simulator, checker and benchmarks"
)]
#[command(after_help = "Outputs go to $PPAXOS_OUT (default ./ppaxos-out).")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file or bundled scenario and validate its trace.
    Run {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        messages: Option<u64>,
    },
    /// Replica throughput with pre-decided command streams.
    Bench {
        #[arg(long, default_value_t = 1)]
        partitions: u16,
        #[arg(long, default_value = "in-memory")]
        backend: BackendKind,
        #[arg(long, default_value_t = 100_000)]
        messages: u64,
        #[arg(long, default_value_t = 3)]
        runs: usize,
    },
    /// Validate recorded traces, or explore schedules exhaustively.
    Check {
        /// Bounds file, or `default` for the bundled bounds.
        #[arg(long, value_name = "CFG", num_args = 0..=1, default_missing_value = "default")]
        exhaustive: Option<String>,
        /// Explore against a defective acceptor.
        #[arg(long, requires = "exhaustive")]
        mutant: Option<Mutant>,
        #[arg(long)]
        threads: Option<usize>,
        /// Trace to validate; defaults to every trace under the output directory.
        #[arg(long, conflicts_with = "exhaustive")]
        trace: Option<PathBuf>,
    },
    /// Print the report of a finished run.
    Report {
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        /// Scenario name under the output directory, or a report.json path.
        #[arg(long)]
        input: String,
    },
    /// List bundled scenarios.
    Scenarios,
}

fn print_violations(vs: &[Violation]) {
    for v in vs {
        println!(
            "{}",
            serde_json::to_string(v).expect("violation serializes")
        );
    }
}

fn run(scenario: &str, seed: Option<u64>, messages: Option<u64>) -> Result<ExitCode, String> {
    let mut s = Scenario::load(scenario).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        s.config.seed = seed;
    }
    if let Some(m) = messages {
        s.config.workload.messages = m;
    }
    let out = out_dir();
    let r = scenario::run_scenario(&s, Some(&out)).map_err(|e| e.to_string())?;
    let lat = r.report.latency.map_or("-".to_string(), |p| {
        format!("p50={}ns p75={}ns p99={}ns", p.p50_ns, p.p75_ns, p.p99_ns)
    });
    println!(
        "{}: decided={} completed={} virtual_ms={} latency(virtual) {} violations={} -> {}",
        s.name,
        r.report.decided_total,
        r.report.completed_total,
        r.report.duration_ns / 1_000_000,
        lat,
        r.violations.len(),
        out.join(&s.name).display()
    );
    print_violations(&r.violations);
    Ok(if r.violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn bench(
    partitions: u16,
    backend: BackendKind,
    messages: u64,
    runs: usize,
) -> Result<ExitCode, String> {
    let out = out_dir();
    let cfg = BenchConfig {
        partitions,
        backend,
        messages,
        runs,
        dir: Some(out.join(format!("bench-storage-p{partitions}"))),
        ..BenchConfig::default()
    };
    let r = bench_replica(&cfg).map_err(|e| e.to_string())?;
    println!("partitions,backend,run,msgs_per_sec,p50_ns,p75_ns,p99_ns");
    for (i, run) in r.runs.iter().enumerate() {
        let (a, b, c) = run
            .latency
            .map_or((0, 0, 0), |p| (p.p50_ns, p.p75_ns, p.p99_ns));
        println!(
            "{partitions},{backend},{i},{:.0},{a},{b},{c}",
            run.msgs_per_sec
        );
    }
    println!(
        "# median {:.0} msgs/s, latency wall-clock",
        r.msgs_per_sec()
    );
    std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
    let path = out.join(format!("bench-p{partitions}-{backend}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&r).expect("serializes"))
        .map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}

fn check(
    exhaustive: Option<String>,
    mutant: Option<Mutant>,
    threads: Option<usize>,
    trace: Option<PathBuf>,
) -> Result<ExitCode, String> {
    let Some(bounds) = exhaustive else {
        let paths = match trace {
            Some(p) => vec![p],
            None => check::traces_under(&out_dir()),
        };
        if paths.is_empty() {
            return Err(format!(
                "no traces found; run a scenario first or set {OUT_ENV}"
            ));
        }
        let mut total = 0;
        for p in paths {
            let vs = check::validate_file(&p).map_err(|e| e.to_string())?;
            println!("{}: {} violations", p.display(), vs.len());
            print_violations(&vs);
            total += vs.len();
        }
        return Ok(if total == 0 {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        });
    };
    let mut cfg = check::load_bounds(&bounds).map_err(|e| e.to_string())?;
    if let Some(m) = mutant {
        cfg.variant = m.into();
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    let start = Instant::now();
    match explore(&cfg) {
        Ok(r) => {
            print_violations(&r.violations);
            let summary = serde_json::json!({
                "violations": r.violations.len(),
                "never_decides": r.never_decides(),
                "stats": r.stats,
                "elapsed_ms": start.elapsed().as_millis() as u64,
            });
            println!("{summary}");
            Ok(if r.violations.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Err(ExploreError::BoundExceeded { partial }) => {
            print_violations(&partial.violations);
            eprintln!("state cap exceeded after {} states", partial.stats.states);
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e.to_string()),
    }
}

fn report(format: ReportFormat, input: &str) -> Result<ExitCode, String> {
    let mut path = PathBuf::from(input);
    if !path.is_file() {
        path = out_dir().join(input).join("report.json");
    }
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let r = MetricsReport::from_json(&text).map_err(|e| e.to_string())?;
    match format {
        ReportFormat::Csv => print!("{}", r.to_csv()),
        ReportFormat::Json => println!("{}", r.to_json()),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            messages,
        } => run(&scenario, seed, messages),
        Cmd::Bench {
            partitions,
            backend,
            messages,
            runs,
        } => bench(partitions, backend, messages, runs),
        Cmd::Check {
            exhaustive,
            mutant,
            threads,
            trace,
        } => check(exhaustive, mutant, threads, trace),
        Cmd::Report { format, input } => report(format, &input),
        Cmd::Scenarios => {
            for (name, _) in scenario::BUNDLED {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
