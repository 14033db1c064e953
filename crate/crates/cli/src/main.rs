//! `sim`: run, audit, and sweep scenarios.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bftfl::audit::audit_dir;
use bftfl::runner::{run, Outcome};
use bftfl::scenario::{Expectation, Scenario};
use bftfl::sweep::{sweep, sweep_csv, Axis};
use clap::{Parser, Subcommand};

const OK: u8 = 0;
const CONFIG: u8 = 2;
const LIVENESS: u8 = 3;
const AUDIT: u8 = 4;

#[derive(Parser)]
#[command(name = "sim", version, about = "Byzantine-tolerant federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Audit a run directory.
    Audit { dir: PathBuf },
    /// Run one scenario per value of a parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn load(path: &Path) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut s = Scenario::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Ok(seed) = std::env::var("SIM_SEED") {
        s.seed = seed.trim().parse().map_err(|_| format!("SIM_SEED `{seed}` is not an unsigned integer"))?;
    }
    Ok(s)
}

fn cmd_run(config: &Path, out: &Path) -> u8 {
    let s = match load(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("config error: {e}");
            return CONFIG;
        }
    };
    let output = run(&s);
    if let Err(e) = output.write(out) {
        eprintln!("cannot write {}: {e}", out.display());
        return CONFIG;
    }
    match (&output.outcome, s.expect) {
        (Outcome::Final, _) => {
            let digest = output.final_digest().map(|d| d.to_hex()).unwrap_or_default();
            println!("FINAL after {} rounds, model {digest}", output.committed_rounds);
            OK
        }
        (Outcome::LivenessFailure { reason }, Expectation::Failure) => {
            println!("expected failure: {reason}");
            OK
        }
        (Outcome::LivenessFailure { reason }, Expectation::Terminate) => {
            eprintln!("liveness failure: {reason}");
            LIVENESS
        }
    }
}

fn cmd_audit(dir: &Path) -> u8 {
    match audit_dir(dir) {
        Ok(r) => {
            println!(
                "audit ok: {} blocks, {} rounds, {} certificates, {} models, max divergence {:e}",
                r.blocks, r.rounds, r.certificates, r.models_checked, r.max_divergence
            );
            OK
        }
        Err(e) => {
            eprintln!("audit failed: {e}");
            AUDIT
        }
    }
}

fn cmd_sweep(config: &Path, axis: &str, values: &[String], out: &Path) -> u8 {
    let base = match load(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("config error: {e}");
            return CONFIG;
        }
    };
    let axis: Axis = match axis.parse() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("config error: {e}");
            return CONFIG;
        }
    };
    let cells = match sweep(&base, axis, values) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return CONFIG;
        }
    };
    let mut status = OK;
    for c in &cells {
        let dir = out.join(format!("{axis}={}", c.value));
        if let Err(e) = c.output.write(&dir) {
            eprintln!("cannot write {}: {e}", dir.display());
            return CONFIG;
        }
        if let (Outcome::LivenessFailure { reason }, Expectation::Terminate) = (&c.output.outcome, c.output.scenario.expect) {
            eprintln!("{axis}={}: liveness failure: {reason}", c.value);
            status = LIVENESS;
        }
    }
    if let Err(e) = fs::write(out.join("sweep.csv"), sweep_csv(axis, &cells)) {
        eprintln!("cannot write sweep.csv: {e}");
        return CONFIG;
    }
    println!("{} cells written to {}", cells.len(), out.display());
    status
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(match &cli.command {
        Command::Run { config, out } => cmd_run(config, out),
        Command::Audit { dir } => cmd_audit(dir),
        Command::Sweep { config, axis, values, out } => cmd_sweep(config, axis, values, out),
    })
}
