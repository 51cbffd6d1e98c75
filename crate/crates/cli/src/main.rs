use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ris_secrecy::scenario::{self, ScenarioConfig, ScenarioError};

/// Transmit-power minimization experiments for RIS-assisted wiretap links.
#[derive(Parser)]
#[command(name = "ris-secrecy", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write runs, aggregate and metadata files.
    Run(RunArgs),
    /// Check a scenario and list every problem.
    Validate { config: PathBuf },
    /// Single-realization convergence traces (first seed only).
    Trace(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Override run.num_realizations.
    #[arg(long)]
    realizations: Option<usize>,
    /// Override run.first_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override run.output_dir (the environment variable still wins).
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_ALL_FAILED: u8 = 2;

fn load(path: &PathBuf) -> Result<ScenarioConfig, ExitCode> {
    ScenarioConfig::from_path(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })
}

fn run(args: RunArgs, trace: bool) -> ExitCode {
    let mut cfg = match load(&args.config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(n) = args.realizations {
        cfg.run.num_realizations = n;
    }
    if let Some(s) = args.seed {
        cfg.run.first_seed = s;
    }
    if let Some(o) = args.out {
        cfg.run.output_dir = o;
    }
    if trace {
        cfg.run.num_realizations = 1;
        cfg.run.trace = true;
    }
    let (out, files) = match scenario::run_and_write(&cfg, args.jobs) {
        Ok(r) => r,
        Err(e @ ScenarioError::Invalid(_)) => {
            eprintln!("{}: {e}", args.config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    for f in &files {
        println!("wrote {}", f.display());
    }
    for a in &out.aggregates {
        println!(
            "{}={} {}: total {:.4e} W (se {:.1e}), {}/{} ok",
            out.axis.column_name(),
            a.sweep_value,
            a.mode,
            a.total_power_mean_w,
            a.total_power_stderr_w,
            a.num_ok,
            a.num_realizations
        );
    }
    let failed = out.all_failed_groups();
    if !failed.is_empty() {
        for (v, m) in failed {
            eprintln!("every realization failed at {}={v} for {m}", out.axis.column_name());
        }
        return ExitCode::from(EXIT_ALL_FAILED);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(a) => run(a, false),
        Command::Trace(a) => run(a, true),
        Command::Validate { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("{}: {e}", config.display());
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let diags = match ScenarioConfig::from_toml_str(&text) {
                Ok(cfg) => cfg.validate(),
                Err(d) => d,
            };
            if diags.is_empty() {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            } else {
                for d in &diags {
                    eprintln!("{}: {d}", config.display());
                }
                ExitCode::from(EXIT_CONFIG)
            }
        }
    }
}
