use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mvperiodic_core::experiments::suite::{self, DEFAULT_SUITE_SEED};
use mvperiodic_core::experiments::with_workers;
use mvperiodic_core::models::BUILTIN_SCENARIOS;
use mvperiodic_cli::{execute, load_input, resolve_workers, CliError};

#[derive(Parser)]
#[command(name = "mvperiodic", version, about = "Monte-Carlo experiments for time-periodic McKean-Vlasov SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config or a manifest.json
    Run {
        config: PathBuf,
        /// Output directory, overriding the one in the config
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios
    ListScenarios,
    /// Run the acceptance suite and write one report per criterion
    VerifyAll {
        dir: PathBuf,
        /// Comma-separated criterion ids
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
        #[arg(long, default_value_t = DEFAULT_SUITE_SEED)]
        seed: u64,
    },
}

fn fail(err: CliError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(3)
}

fn run(config: PathBuf, out: Option<PathBuf>) -> ExitCode {
    let mut cfg = match load_input(&config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    match execute(&cfg) {
        Ok(report) => {
            println!("{}", report.summary());
            println!("outputs written to {}", cfg.output.dir.display());
            ExitCode::from(report.verdict.exit_code() as u8)
        }
        Err(e) => fail(e),
    }
}

fn verify_all(dir: PathBuf, only: Vec<u32>, seed: u64) -> ExitCode {
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return fail(CliError::io(&dir, e));
    }
    let ids: Vec<u32> = suite::CRITERIA.iter().map(|(id, _)| *id).filter(|id| only.is_empty() || only.contains(id)).collect();
    let mut summary = Vec::new();
    let mut all_passed = true;
    for id in ids {
        let outcome = match resolve_workers(None) {
            Some(w) => with_workers(w, || suite::run_criterion(id, seed)),
            None => suite::run_criterion(id, seed),
        };
        println!("{}", outcome.line());
        all_passed &= outcome.passed;
        let path = dir.join(format!("criterion_{id:02}.json"));
        let json = serde_json::to_string_pretty(&outcome).expect("outcome is serializable");
        if let Err(e) = std::fs::write(&path, json) {
            return fail(CliError::io(&path, e));
        }
        summary.push(serde_json::json!({ "id": id, "name": outcome.name, "passed": outcome.passed, "summary": outcome.summary }));
    }
    let path = dir.join("summary.json");
    let doc = serde_json::json!({ "seed": seed, "all_passed": all_passed, "criteria": summary });
    if let Err(e) = std::fs::write(&path, serde_json::to_string_pretty(&doc).expect("summary is serializable")) {
        return fail(CliError::io(&path, e));
    }
    ExitCode::from(if all_passed { 0 } else { 1 })
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, out } => run(config, out),
        Command::ListScenarios => {
            for (name, about) in BUILTIN_SCENARIOS {
                println!("{name:<22} {about}");
            }
            ExitCode::SUCCESS
        }
        Command::VerifyAll { dir, only, seed } => verify_all(dir, only, seed),
    }
}
