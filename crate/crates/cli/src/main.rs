use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(name = "epr", version, about = "Exact posterior regression for multi-type spatial data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one synthetic dataset and its truth files.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Which replicate of the configured simulation to write.
        #[arg(long, default_value_t = 0)]
        replicate: usize,
    },
    /// Draw exact posterior replicates for a dataset.
    FitEpr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the Gibbs/Metropolis baseline on a dataset.
    FitMcmc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Posterior prediction tables at every point and region of a dataset.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fit: PathBuf,
    },
    /// Score a fit against simulation truth.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        /// Directory holding the truth files; defaults to `--data`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run the EPR versus MCMC simulation study.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML file with `seed`, `preset` and a `[sim]` table.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Simulation geometry preset: `desk` or `tiny`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// EPR replicates per fit.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    alpha_xi: Option<f64>,
    /// Simulation replicates for `compare`.
    #[arg(long)]
    replicates: Option<usize>,
    /// Inject the structured discrepancy when simulating.
    #[arg(long)]
    discrepancy: Option<bool>,
    /// Worker threads, 0 for all cores; `EPR_THREADS` takes precedence.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error code=config msg={}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error code={} msg={}",
                e.code(),
                config::one_line(&e.to_string())
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
