//! `ssvae`: train, evaluate and sample the semi-supervised SMILES VAE.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "ssvae", version, about = "Semi-supervised VAE for property-conditioned SMILES generation")]
struct Cli {
    /// INI run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides run.out, the run directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the symbol vocabulary of the dataset.
    Vocab,
    /// Write a synthetic labeled corpus to <out>/synthetic.csv.
    Synth,
    /// Train and write the checkpoint and training history.
    Train {
        /// Continue from <out>/model.ckpt.
        #[arg(long)]
        resume: bool,
    },
    /// Predict properties and report MAE when labels are present.
    Predict {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Run every configured generation condition.
    Generate {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Summarize a run directory into report.csv.
    Report {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.set;
    if let Some(seed) = cli.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("run.out={}", out.display()));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Vocab => commands::vocab(&cfg),
        Command::Synth => commands::synth(&cfg),
        Command::Train { resume } => commands::train(&cfg, resume),
        Command::Predict { checkpoint } => commands::predict(&cfg, checkpoint.as_deref()),
        Command::Generate { checkpoint } => commands::generate(&cfg, checkpoint.as_deref()),
        Command::Report { checkpoint } => report::report(&cfg, checkpoint.as_deref()),
        Command::Config => {
            print!("{}", cfg.emit());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
