//! `swobs check|design|simulate|analyze <scenario>`
//!
//! Exit status: 0 on success, 1 when an assumption, the design or the
//! convergence analysis fails, 2 on unreadable or inconsistent input.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use serde::Serialize;
use swobs::design::ObserverBank;
use swobs::report::{csv_rows, read_trace_csv, write_trace_csv, DesignReport};
use swobs::scenario::Scenario;
use swobs::{pipeline, Error};

#[derive(Parser, Debug)]
#[command(name = "swobs", version, about = "Distributed observers for neutrally stable plants over switching graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Scenario file (omit with --batch).
    #[arg(required_unless_present = "batch")]
    scenario: Option<PathBuf>,
    /// Output file; with --batch, an output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Design report from `swobs design` (otherwise designed on the fly).
    #[arg(long)]
    design: Option<PathBuf>,
    /// Trace CSV from `swobs simulate` (otherwise simulated on the fly).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Runs the command on every `*.json` scenario in DIR, in parallel.
    #[arg(long, value_name = "DIR", conflicts_with_all = ["scenario", "design", "trace"])]
    batch: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Checks the three standing assumptions.
    Check(Common),
    /// Designs every local observer and writes the design report.
    Design(Common),
    /// Simulates plant and observers; writes the trace CSV and prints a summary.
    Simulate(Common),
    /// Certifies the Gramian bound, window contraction and decay rates.
    Analyze(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Check,
    Design,
    Simulate,
    Analyze,
}

impl Kind {
    fn extension(self) -> &'static str {
        match self {
            Kind::Check => "check.json",
            Kind::Design => "design.json",
            Kind::Simulate => "csv",
            Kind::Analyze => "analysis.json",
        }
    }
}

/// Outcome of one run: exit code plus a message for stderr.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Scenario(_) | Error::Json(_) | Error::Io(_) | Error::Dimension(_) | Error::Schedule(_) => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn domain(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(Error::from)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, Failure> {
    let mut scenario = Scenario::load(path).map_err(|e| Failure { code: 2, message: format!("{}: {e}", path.display()) })?;
    if let Some(seed) = seed {
        scenario.sim.seed = seed;
    }
    Ok(scenario)
}

fn load_bank(scenario: &Scenario, design: Option<&Path>) -> Result<ObserverBank, Failure> {
    match design {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(Error::from)?;
            let plant = scenario.plant()?;
            let bank = DesignReport::from_json_str(&text)
                .and_then(|r| r.to_bank(&plant))
                .map_err(|e| Failure { code: 2, message: format!("{}: {e}", path.display()) })?;
            Ok(bank)
        }
        None => Ok(pipeline::design(scenario)?),
    }
}

fn run(kind: Kind, scenario_path: &Path, args: &Common, out: Option<&Path>) -> Result<(), Failure> {
    let scenario = load_scenario(scenario_path, args.seed)?;
    match kind {
        Kind::Check => {
            let report = pipeline::check(&scenario)?;
            write_json(&report, out)?;
            if !report.pass {
                let failed: Vec<&str> = [&report.neutral_stability, &report.joint_observability, &report.joint_connectivity]
                    .into_iter()
                    .filter(|v| !v.pass)
                    .map(|v| v.assumption.as_str())
                    .collect();
                return Err(domain(format!("assumption violated: {}", failed.join("; "))));
            }
        }
        Kind::Design => {
            let bank = load_bank(&scenario, None)?;
            let report = DesignReport::from_bank(&bank);
            match out {
                Some(path) => std::fs::write(path, report.to_json() + "\n").map_err(Error::from)?,
                None => println!("{}", report.to_json()),
            }
        }
        Kind::Simulate => {
            let bank = load_bank(&scenario, args.design.as_deref())?;
            let (trace, summary) = pipeline::simulate(&scenario, &bank)?;
            if let Some(path) = out {
                let schedule = scenario.schedule()?;
                let rows = csv_rows(&trace, &schedule, scenario.sim.csv_every.unwrap_or(1));
                let file = BufWriter::new(File::create(path).map_err(Error::from)?);
                write_trace_csv(file, &trace, &rows)?;
                info!("wrote {} rows to {}", rows.len(), path.display());
            }
            write_json(&summary, None)?;
        }
        Kind::Analyze => {
            let bank = load_bank(&scenario, args.design.as_deref())?;
            let trace = match &args.trace {
                Some(path) => {
                    let plant = scenario.plant()?;
                    let file = BufReader::new(File::open(path).map_err(Error::from)?);
                    read_trace_csv(file, plant.n(), plant.agents())
                        .map_err(|e| Failure { code: 2, message: format!("{}: {e}", path.display()) })?
                }
                None => pipeline::simulate(&scenario, &bank)?.0,
            };
            let report = pipeline::analyze(&scenario, &bank, &trace)?;
            write_json(&report, out)?;
            let v = &report.verdict;
            if !v.pass {
                return Err(domain(format!(
                    "analysis failed: uco_valid = {}, contraction_below_one = {}, rates_positive = {}",
                    v.uco_valid, v.contraction_below_one, v.rates_positive
                )));
            }
        }
    }
    Ok(())
}

fn run_batch(kind: Kind, dir: &Path, args: &Common) -> Result<(), Failure> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.to_string_lossy().ends_with(".design.json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure { code: 2, message: format!("no scenario files in {}", dir.display()) });
    }
    let out_dir = args.out.clone().unwrap_or_else(|| dir.to_path_buf());
    std::fs::create_dir_all(&out_dir).map_err(Error::from)?;
    let results: Vec<(PathBuf, Result<(), Failure>)> = std::thread::scope(|s| {
        let handles: Vec<_> = files
            .iter()
            .map(|f| {
                let stem = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let out = out_dir.join(format!("{stem}.{}", kind.extension()));
                s.spawn(move || (f.clone(), run(kind, f, args, Some(&out))))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("batch worker panicked")).collect()
    });
    let mut worst = 0;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for (file, result) in results {
        match result {
            Ok(()) => {
                let _ = writeln!(lock, "ok   {}", file.display());
            }
            Err(f) => {
                let _ = writeln!(lock, "FAIL {} (exit {}): {}", file.display(), f.code, f.message);
                worst = worst.max(f.code);
            }
        }
    }
    if worst == 0 {
        Ok(())
    } else {
        Err(Failure { code: worst, message: "some batch runs failed".into() })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SWOBS_LOG", "warn")).init();
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Check(a) => (Kind::Check, a),
        Command::Design(a) => (Kind::Design, a),
        Command::Simulate(a) => (Kind::Simulate, a),
        Command::Analyze(a) => (Kind::Analyze, a),
    };
    let result = match (&args.batch, &args.scenario) {
        (Some(dir), _) => run_batch(kind, dir, args),
        (None, Some(path)) => run(kind, path, args, args.out.as_deref()),
        (None, None) => unreachable!("clap requires a scenario or --batch"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{}", f.message);
            eprintln!("swobs: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
