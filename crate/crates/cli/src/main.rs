use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedorch::harness::{self, HarnessError};
use fedorch::sim::{SimConfig, SimOutput};

/// Seed override read when `--seed` is absent.
const SEED_ENV: &str = "FEDORCH_SEED";

#[derive(Debug, Parser)]
#[command(name = "fedorch", version, about = "Run federated learning orchestration simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment from a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides both the config file and FEDORCH_SEED.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every variant of a built-in scenario into `<out>/<variant>/`.
    Scenario {
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

#[derive(Debug)]
enum CliError {
    Harness(HarnessError),
    BadSeedEnv(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Harness(e) => e.exit_code() as u8,
            CliError::BadSeedEnv(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Harness(e) => write!(f, "{e}"),
            CliError::BadSeedEnv(v) => write!(f, "config error: {SEED_ENV}={v:?} is not an unsigned integer"),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        CliError::Harness(e)
    }
}

/// `--seed` wins over the environment, which wins over the file.
fn seed_override(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::BadSeedEnv(v)),
        Err(_) => Ok(None),
    }
}

fn summarize(label: &str, out: &SimOutput, dir: &Path) {
    let finals = out.final_rows();
    let mean = |f: fn(&fedorch::sim::MetricsRow) -> f64| finals.iter().map(|r| f(r)).sum::<f64>() / finals.len().max(1) as f64;
    println!(
        "{label}: {} rows, virtual time {:.1}s, final mean local acc {:.4}, global acc {:.4} -> {}",
        out.rows.len(),
        out.total_time,
        mean(|r| r.local_accuracy),
        mean(|r| r.global_accuracy),
        dir.display()
    );
}

fn run_one(label: &str, cfg: &SimConfig, out: &Path) -> Result<(), CliError> {
    let (manifest, output) = harness::run_experiment(cfg, out)?;
    summarize(label, &output, out);
    println!("  config digest {} seed {}", manifest.config_digest, manifest.seed);
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut cfg = harness::parse_config(&config)?;
            if let Some(s) = seed_override(seed)? {
                cfg.seed = s;
            }
            run_one("run", &cfg, &out)
        }
        Command::Scenario { name, out, seed } => {
            let seed = seed_override(seed)?.unwrap_or(0);
            let scenario = harness::scenario(&name, seed)?;
            for v in &scenario.variants {
                run_one(&v.label, &v.config, &out.join(&v.label))?;
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = harness::parse_config(&config)?;
            println!(
                "ok: {} mode, {} aggregators, {} rounds, seed {}",
                cfg.mode,
                cfg.aggregators.len(),
                cfg.rounds,
                cfg.seed
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
