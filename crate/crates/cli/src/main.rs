//! `dfm`: verify invariants, sample, evaluate ELBOs and train tabular posteriors
//! from a JSON experiment config.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage or configuration error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::Context;
use config::{ConfigError, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "dfm", version, about = "Discrete flow matching experiments on CTMCs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config field, e.g. `--set path.family=metric`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory (overrides output.directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for sampling, ELBO estimation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the Monte-Carlo loops.
    #[arg(long, global = true, env = "DFM_THREADS")]
    threads: Option<usize>,

    /// Also write the conditional rate matrices to rates.json.
    #[arg(long, global = true)]
    dump_rates: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Run the invariant suite for the configured path and velocity.
    Verify,
    /// Simulate trajectories and report marginal TV distances.
    Sample,
    /// Estimate ELBOs for probe sequences.
    Elbo,
    /// Train a tabular posterior with the cross-entropy objective.
    Train,
}

fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config::config_err(format!("thread pool: {e}")))?;
    }
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(out) = cli.out {
        cfg.output.directory = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    let ctx = Context::new(cfg, cli.dump_rates)?;
    ctx.prepare_output()?;
    match cli.command {
        Command::Verify => commands::verify::run(&ctx),
        Command::Sample => commands::sample::run(&ctx),
        Command::Elbo => commands::elbo::run(&ctx),
        Command::Train => commands::train::run(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
