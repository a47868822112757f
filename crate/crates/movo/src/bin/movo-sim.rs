//! Scenario runner CLI.
//!
//! `movo-sim run <scenario> [--config <file>] [--duration-s N] [--seed S]
//! [--out <file>]` executes one scenario on the virtual clock and emits its
//! metrics report as JSON (to stdout, and to `--out` when given, with a
//! JSON-lines event log beside it). `movo-sim verify --report <file>
//! --expect <file>` checks a report against an expectations file.
//!
//! Exit codes: 0 success / all checks passed; 1 at least one metric check
//! failed; 2 invariant breach, bad configuration, or malformed input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use movo::harness::{run_scenario, verify_report, Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "movo-sim",
    version,
    about = "Deterministic smart-mobility middleware simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and emit its metrics report.
    Run {
        /// One of: insurance, mechanic, charging, saturation.
        scenario: String,
        /// JSON file overriding any subset of the scenario preset.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Simulated duration in seconds (overrides preset and config file).
        #[arg(long = "duration-s", value_name = "N")]
        duration_s: Option<u64>,
        /// Seed for all randomness (overrides preset and config file).
        #[arg(long, value_name = "S")]
        seed: Option<u64>,
        /// Write the report here; the event log goes to `<out stem>.events.jsonl`.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Check a metrics report against an expectations file.
    Verify {
        /// Report JSON produced by `run`.
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
        /// Expectations JSON: metric name to check specification.
        #[arg(long, value_name = "FILE")]
        expect: PathBuf,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenario,
            config,
            duration_s,
            seed,
            out,
        } => run(&scenario, config.as_deref(), duration_s, seed, out.as_deref()),
        Command::Verify { report, expect } => verify(&report, &expect),
    }
}

fn run(
    scenario: &str,
    config_path: Option<&Path>,
    duration_s: Option<u64>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> ExitCode {
    let scenario: Scenario = match scenario.parse() {
        Ok(k) => k,
        Err(e) => {
            eprintln!("movo-sim: {e}");
            return ExitCode::from(2);
        }
    };
    let mut config = ScenarioConfig::preset(scenario);
    if let Some(path) = config_path {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("movo-sim: cannot read {}: {e}", path.display());
                return ExitCode::from(2);
            }
        };
        config = match config.apply_overrides_json(&text) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("movo-sim: {e}");
                return ExitCode::from(2);
            }
        };
    }
    if let Some(d) = duration_s {
        config.duration_s = d;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Err(e) = config.validate() {
        eprintln!("movo-sim: {e}");
        return ExitCode::from(2);
    }

    let outcome = match run_scenario(&config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("movo-sim: run failed: {e}");
            return ExitCode::from(2);
        }
    };

    let report_json = outcome.report.to_json();
    print!("{report_json}");

    if let Some(out) = out {
        if let Err(e) = std::fs::write(out, &report_json) {
            eprintln!("movo-sim: cannot write {}: {e}", out.display());
            return ExitCode::from(2);
        }
        let events_path = out.with_extension("events.jsonl");
        let mut log = String::new();
        for event in &outcome.events {
            log.push_str(&event.to_string());
            log.push('\n');
        }
        if let Err(e) = std::fs::write(&events_path, log) {
            eprintln!("movo-sim: cannot write {}: {e}", events_path.display());
            return ExitCode::from(2);
        }
        eprintln!(
            "movo-sim: report written to {}, events to {}",
            out.display(),
            events_path.display()
        );
    }

    if outcome.breaches.is_empty() {
        ExitCode::SUCCESS
    } else {
        for breach in &outcome.breaches {
            eprintln!("movo-sim: invariant breach: {breach}");
        }
        ExitCode::from(2)
    }
}

fn verify(report: &Path, expect: &Path) -> ExitCode {
    let report_json = match std::fs::read_to_string(report) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("movo-sim: cannot read {}: {e}", report.display());
            return ExitCode::from(2);
        }
    };
    let expect_json = match std::fs::read_to_string(expect) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("movo-sim: cannot read {}: {e}", expect.display());
            return ExitCode::from(2);
        }
    };
    let results = match verify_report(&report_json, &expect_json) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("movo-sim: {e}");
            return ExitCode::from(2);
        }
    };
    let mut failed = 0;
    for result in &results {
        println!("{}", result.line());
        if !result.passed {
            failed += 1;
        }
    }
    println!(
        "{} of {} checks passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
