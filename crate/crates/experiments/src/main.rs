use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use maxweight_experiments::run::{bounds_report, oracle_report};
use maxweight_experiments::{execute, prepare, write_outputs, ExitKind, ExperimentConfig, ExperimentError};

/// Greedy primal-dual solvers and the bundled experiments.
#[derive(Parser)]
#[command(name = "maxweight", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write trace.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Reject parameters outside the guaranteed ranges.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the theoretical brackets without running.
    Bounds {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print f* and q(λ) for the configured problem.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated multipliers.
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
    },
    /// Check a configuration and print the resolved parameters.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MAXWEIGHT_LOG", "warn")).init();
    let cli = Cli::parse();
    let status = match dispatch(cli.command) {
        Ok(kind) => kind,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            e.exit_kind()
        }
    };
    ExitCode::from(status.code() as u8)
}

fn print(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).unwrap_or_default());
}

fn dispatch(command: Command) -> Result<ExitKind, ExperimentError> {
    match command {
        Command::Run {
            config,
            seed,
            strict,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let output = execute(&cfg, seed, strict)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            let (trace, summary) = write_outputs(&output, &dir)?;
            println!("trace: {}", trace.display());
            println!("summary: {}", summary.display());
            if output.exit == ExitKind::Contract {
                eprintln!("contract violation detected; see {}", summary.display());
            }
            Ok(output.exit)
        }
        Command::Bounds { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print(&bounds_report(&prepare(&cfg, false)?)?);
            Ok(ExitKind::Success)
        }
        Command::Oracle { config, lambda } => {
            let cfg = ExperimentConfig::load(&config)?;
            print(&oracle_report(&prepare(&cfg, false)?, &lambda)?);
            Ok(ExitKind::Success)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let prepared = prepare(&cfg, false)?;
            if prepared.problem.is_some() {
                let r = prepared.resolve()?;
                println!("ok: α = {:e}, β = {:e}, γ₁ = {}, ḡ = {}, υ = {}", r.alpha, r.beta, r.gamma1, r.gbar, r.upsilon);
            } else {
                println!("ok");
            }
            Ok(ExitKind::Success)
        }
    }
}
