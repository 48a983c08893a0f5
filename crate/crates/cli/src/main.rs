//! `scqa`: run SCQA propagation, response and oracle-comparison jobs from a
//! JSON configuration and write CSV/JSON artifacts.
//!
//! Exit codes: 0 success, 1 i/o failure, 2 configuration error,
//! 3 numerical-tolerance failure, 4 Fock truncation failure.

mod config;
mod jobs;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::ExperimentConfig;
use jobs::{JobError, Outcome};
use output::Report;

#[derive(Parser)]
#[command(name = "scqa", version, about = "Self-consistent quadratic phase-space dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the SCQA equations; writes trajectory.csv and evolve.json.
    Evolve(Common),
    /// Response functions and polarization; writes respond.json.
    Respond(Common),
    /// SCQA against the truncated-Fock reference; writes compare.json.
    Compare(Common),
    /// Solve for a stationary Gaussian; writes stationary.json.
    Stationary(Common),
    /// Universal invariants of the initial state; writes invariants.json.
    Invariants(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Worker threads for response grids (default: all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

type Job<T> = fn(&ExperimentConfig, &Path) -> Result<Outcome<T>, JobError>;

fn run<T: Serialize>(name: &'static str, args: &Common, job: Job<T>) -> i32 {
    let log = |msg: &str| {
        if args.verbose {
            eprintln!("scqa {name}: {msg}");
        }
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("scqa {name}: cannot configure {n} threads: {e}");
            return 2;
        }
    }
    let text = match fs::read(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("scqa {name}: cannot read {}: {e}", args.config.display());
            return 1;
        }
    };
    let mut report: Report<T> = Report::new(name, &output::sha256_hex(&text));
    log(&format!("config {} (sha256 {})", args.config.display(), report.config_sha256));

    let outcome = match std::str::from_utf8(&text) {
        Ok(s) => config::parse(s).map_err(JobError::from),
        Err(_) => Err(JobError::Config(config::ConfigError::new("", "config is not UTF-8"))),
    }
    .and_then(|cfg| {
        log("configuration valid, running");
        job(&cfg, &args.out)
    });

    let code = match outcome {
        Ok(Outcome { result, passed }) => {
            report.result = Some(result);
            if passed {
                0
            } else {
                report.status = "fail";
                eprintln!("scqa {name}: tolerances not met, see {name}.json");
                3
            }
        }
        Err(e) => {
            eprintln!("scqa {name}: {e}");
            report.status = "error";
            report.error = Some(e.report());
            e.exit_code()
        }
    };
    let file = format!("{name}.json");
    if let Err(e) = output::write_text(&args.out, &file, &output::to_json(&report)) {
        eprintln!("scqa {name}: cannot write {file}: {e}");
        return 1;
    }
    log(&format!("wrote {}", args.out.join(&file).display()));
    code
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Evolve(a) => run("evolve", a, jobs::evolve),
        Command::Respond(a) => run("respond", a, jobs::respond),
        Command::Compare(a) => run("compare", a, jobs::compare),
        Command::Stationary(a) => run("stationary", a, jobs::stationary),
        Command::Invariants(a) => run("invariants", a, jobs::invariants),
    };
    ExitCode::from(code as u8)
}
