use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use softprune::commands::{self, Overrides};
use softprune::config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "softprune",
    version,
    about = "Soft filter pruning for convolutional networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, prune and fine-tune as described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report FLOPs of an architecture under uniform filter pruning.
    Flops {
        #[arg(long)]
        arch: String,
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        /// exact: n·(1−P) remaining filters; floor: n − floor(n·P).
        #[arg(long, default_value = "exact")]
        rounding: String,
        /// residual-restores or propagate.
        #[arg(long, default_value = "residual-restores")]
        scope: String,
        /// Also print every conv and dense layer.
        #[arg(long)]
        per_layer: bool,
    },
    /// Remove the filters listed in a mask file from a checkpoint.
    Compact {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test accuracy of a checkpoint on the dataset of a config file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Zero these filters before evaluating.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Print and save the decay and rate schedules of a config file.
    Schedule {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, overrides: Overrides) -> softprune::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    overrides.apply(&mut config);
    Ok(config)
}

fn dispatch(command: Command) -> softprune::Result<String> {
    match command {
        Command::Train {
            config,
            arch,
            rate,
            seed,
            out,
        } => commands::cmd_train(&load(&config, Overrides { arch, rate, seed, out })?),
        Command::Flops {
            arch,
            rate,
            rounding,
            scope,
            per_layer,
        } => commands::cmd_flops(
            &arch,
            rate,
            commands::parse_scope(&scope)?,
            commands::parse_rounding(&rounding)?,
            per_layer,
        ),
        Command::Compact { checkpoint, mask, out } => commands::cmd_compact(&checkpoint, &mask, &out),
        Command::Eval {
            checkpoint,
            config,
            mask,
        } => commands::cmd_eval(&checkpoint, &load(&config, Overrides::default())?, mask.as_deref()),
        Command::Schedule { config, rate, out } => commands::cmd_schedule(&load(
            &config,
            Overrides {
                rate,
                out,
                ..Overrides::default()
            },
        )?),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
