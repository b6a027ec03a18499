// SPDX-License-Identifier: Apache-2.0
//! The `pollring` command line: `bench urs`, `sim run`, `analyze hijack`,
//! `state inspect`. Every command writes one JSON report that embeds a
//! [`RunManifest`].
//!
//! Exit codes: 0 success, 2 a checked invariant failed, 64 bad usage or
//! unreadable input.

pub mod analyze;
pub mod bench;
pub mod inspect;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pollring_netsim::{run_simulation_with_state, SimConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EXIT_VIOLATION: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invariant violated: {0}")]
    Violation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Violation(_) => EXIT_VIOLATION,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// How a report was produced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub tool_version: String,
}

impl RunManifest {
    fn new(command: &str, config_path: Option<&Path>, seed: Option<u64>, outputs: &[&Option<PathBuf>]) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            outputs: outputs.iter().filter_map(|o| o.as_ref().map(|p| p.display().to_string())).collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Parser, Debug)]
#[command(name = "pollring", version, about = "Simulate, benchmark and inspect a pollring ledger")]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Cryptographic benchmarks.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Network simulation.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Closed-form analysis.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Global-state tools.
    #[command(subcommand)]
    State(StateCmd),
}

#[derive(Subcommand, Debug)]
enum BenchCmd {
    /// Sign, verify and batch-verify timings per ring size.
    Urs(bench::BenchArgs),
}

#[derive(Subcommand, Debug)]
enum SimCmd {
    /// Run a simulation config and write its report.
    Run(SimArgs),
}

#[derive(Subcommand, Debug)]
enum AnalyzeCmd {
    /// Hijacking cost against the per-user review baseline.
    Hijack(analyze::HijackArgs),
}

#[derive(Subcommand, Debug)]
enum StateCmd {
    /// Look up one key of a state snapshot and check its Merkle proof.
    Inspect(inspect::InspectArgs),
}

#[derive(Args, Debug)]
struct SimArgs {
    /// JSON simulation config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the final global state snapshot here.
    #[arg(long)]
    state_out: Option<PathBuf>,
}

/// Writes `value` as pretty JSON to `path`, or to stdout.
pub(crate) fn emit<T: Serialize>(manifest: &RunManifest, body: &T, path: &Option<PathBuf>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&Report { manifest, body }).map_err(usage)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(usage),
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn sim_run(a: &SimArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.config).map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    let mut cfg = SimConfig::from_json(&text).map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(usage)?;
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    let (report, state) = run_simulation_with_state(&cfg).map_err(|e| CliError::Violation(e.to_string()))?;
    let manifest = RunManifest::new("sim run", Some(&a.config), Some(cfg.seed), &[&a.out, &a.state_out]);
    emit(&manifest, &report, &a.out)?;
    if let Some(p) = &a.state_out {
        emit(&manifest, &state, &Some(p.clone()))?;
    }
    let t = &report.totals;
    eprintln!(
        "{} blocks, {} votes committed ({:.2}/s logical), {} blacklisted",
        t.blocks,
        t.votes_committed,
        t.votes_per_second,
        report.blacklist.len()
    );
    let v = report.violations();
    if v.is_empty() {
        Ok(())
    } else {
        Err(CliError::Violation(v.join("; ")))
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Bench(BenchCmd::Urs(a)) => bench::run(a),
        Cmd::Sim(SimCmd::Run(a)) => sim_run(a),
        Cmd::Analyze(AnalyzeCmd::Hijack(a)) => analyze::run(a),
        Cmd::State(StateCmd::Inspect(a)) => inspect::run(a),
    }
}

pub fn main_with_args<I: IntoIterator<Item = T>, T: Into<OsString> + Clone>(args: I) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
