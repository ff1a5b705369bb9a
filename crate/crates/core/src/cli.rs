//! Command-line driver: load a scenario, run it, write result files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::Parser;
use thiserror::Error;

use crate::metrics::{DropReason, ThroughputUnit};
use crate::scenario::{builtin, Scenario, ScenarioError, BUILTINS};
use crate::simkernel::RunReport;

pub const EXIT_OK: i32 = 0;
pub const EXIT_SCENARIO: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const OUTPUT_FILES: [&str; 5] = [
    "delay.csv",
    "throughput.csv",
    "loss.csv",
    "trace.log",
    "summary.txt",
];

#[derive(Debug, Clone, Parser)]
#[command(
    name = "scatsim",
    about = "Simulate AODV routing over a Bluetooth scatternet"
)]
pub struct Args {
    /// Scenario file, or a built-in name (paper-scatternet, fig3-loop).
    #[arg(long)]
    pub scenario: String,
    /// Defaults to the scenario's `seed` param, else 1.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated end time in ms. Defaults to the scenario's `until`, else 2000.
    #[arg(long)]
    pub until: Option<u64>,
    #[arg(long, default_value = "./out")]
    pub out: PathBuf,
    /// Bucket width of the CSV series in ms.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub interval: u64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
    #[error("cannot read scenario `{path}`: {source}")]
    Read { path: String, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(_) => EXIT_SCENARIO,
            CliError::Read { .. } | CliError::Write { .. } => EXIT_IO,
        }
    }
}

pub fn load_scenario(name_or_path: &str) -> Result<Scenario, CliError> {
    let text = match builtin(name_or_path) {
        Some(t) => t.to_string(),
        None => fs::read_to_string(name_or_path).map_err(|source| CliError::Read {
            path: name_or_path.to_string(),
            source,
        })?,
    };
    Ok(Scenario::parse(&text)?)
}

pub fn summary(scenario: &str, seed: u64, until_ms: u64, report: &RunReport) -> String {
    let l = &report.loss;
    let mut s = String::new();
    let _ = writeln!(s, "scenario {scenario}");
    let _ = writeln!(s, "seed {seed}");
    let _ = writeln!(s, "until_ms {until_ms}");
    let _ = writeln!(s, "events {}", report.events_processed);
    let _ = writeln!(s, "sent {}", l.sent);
    let _ = writeln!(s, "received {}", l.received);
    for r in DropReason::ALL {
        let _ = writeln!(s, "dropped_{r} {}", l.dropped.get(&r).copied().unwrap_or(0));
    }
    let _ = writeln!(s, "in_flight {}", l.in_flight);
    let _ = writeln!(s, "loss_ratio {:.6}", l.loss_ratio());
    match report.average_delay_us {
        Some(d) => {
            let _ = writeln!(s, "average_delay_us {d:.3}");
        }
        None => {
            let _ = writeln!(s, "average_delay_us none");
        }
    }
    let _ = writeln!(s, "scenario_errors {}", report.scenario_errors.len());
    for e in &report.scenario_errors {
        let _ = writeln!(s, "error {e}");
    }
    s
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|source| CliError::Write { path, source })
}

/// Runs one scenario and writes the five output files. Runtime scenario
/// errors (a migration into a full piconet, say) still produce output but
/// give exit code 2.
pub fn execute(args: &Args) -> Result<RunReport, CliError> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.config.seed = seed;
    }
    if let Some(until) = args.until {
        scenario.config.until_ms = until;
    }
    let until = scenario.config.until_ms;
    let mut engine = scenario.build_engine();
    let report = engine.run_until(until);

    fs::create_dir_all(&args.out).map_err(|source| CliError::Write {
        path: args.out.clone(),
        source,
    })?;
    let horizon = until * 1000;
    let m = engine.metrics();
    let iv = args.interval;
    let series = [
        ("delay.csv", m.delay_series(iv, horizon)),
        (
            "throughput.csv",
            m.throughput_series(iv, horizon, ThroughputUnit::Packets),
        ),
        ("loss.csv", m.loss_series(iv, horizon)),
    ];
    for (name, s) in series {
        write(&args.out, name, &s.expect("interval is positive").to_csv())?;
    }
    write(&args.out, "trace.log", &engine.trace().render())?;
    write(
        &args.out,
        "summary.txt",
        &summary(&args.scenario, scenario.config.seed, until, &report),
    )?;
    Ok(report)
}

pub fn run(args: &Args) -> i32 {
    match execute(args) {
        Ok(report) if report.scenario_errors.is_empty() => EXIT_OK,
        Ok(report) => {
            for e in &report.scenario_errors {
                eprintln!("scenario error: {e}");
            }
            EXIT_SCENARIO
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Read { .. }) {
                let names: Vec<&str> = BUILTINS.iter().map(|b| b.0).collect();
                eprintln!("built-in scenarios: {}", names.join(", "));
            }
            e.exit_code()
        }
    }
}
