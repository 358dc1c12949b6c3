//! `sanet` — train, evaluate and inspect the infrared small-target detector.

mod commands;
mod config;
mod manifest;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, RunConfig};
use sanet_core::SanetError;

#[derive(Parser)]
#[command(
    name = "sanet",
    about = "Infrared small-target detection: training, evaluation, synthesis and diagnostics",
    after_help = RunConfig::help_text()
)]
struct Cli {
    /// Config file of `key = value` lines (see the key list below).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. --set train.epochs=10 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize a synthetic dataset into the configured data directories.
    Synth,
    /// Train a model; writes checkpoints and the history CSV.
    Train,
    /// Evaluate a checkpoint on the test dataset; writes the metric report.
    Eval {
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a checkpoint on one image; writes the predicted mask and an
    /// overlay visualization.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input image (binary PGM, 8- or 16-bit).
        #[arg(long)]
        image: PathBuf,
    },
    /// Run the finite-difference gradient suite; exit 0 iff every component
    /// passes.
    Gradcheck,
    /// Report parameter count, FLOPs and forward latency for the configured
    /// model.
    Bench,
    /// Run the ablation matrix (default rows, or a spec file).
    Ablate {
        /// Row spec file; same key=value format (see README).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

/// Error category -> (label, exit code): malformed configuration 2, missing
/// files 3, numerical failures 4, anything else 1.
fn categorize(err: &anyhow::Error) -> (&'static str, u8) {
    if err.downcast_ref::<ConfigError>().is_some() {
        return ("config", 2);
    }
    if let Some(e) = err.downcast_ref::<SanetError>() {
        return match e {
            SanetError::InvalidArg(_) | SanetError::ShapeMismatch(_) => ("config", 2),
            SanetError::Io(_)
            | SanetError::Dataset(_)
            | SanetError::Checkpoint(_) => ("missing", 3),
            SanetError::NonFinite(_) | SanetError::Training(_) => ("numeric", 4),
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return ("missing", 3);
    }
    ("error", 1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match RunConfig::load(cli.config.as_deref(), &cli.set) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error[config]: {e}");
            return ExitCode::from(2);
        }
    };

    let result = match &cli.command {
        Command::Synth => commands::synth(&cfg, &cli.out),
        Command::Train => commands::train(&cfg, &cli.out),
        Command::Eval { checkpoint } => commands::eval(&cfg, &cli.out, checkpoint),
        Command::Infer { checkpoint, image } => {
            commands::infer(&cfg, &cli.out, checkpoint, image)
        }
        Command::Gradcheck => commands::gradcheck(&cfg, &cli.out),
        Command::Bench => commands::bench(&cfg, &cli.out),
        Command::Ablate { spec } => commands::ablate(&cfg, &cli.out, spec.as_deref()),
    };

    match result {
        Ok(code) => code,
        Err(err) => {
            let (label, code) = categorize(&err);
            eprintln!("error[{label}]: {err}");
            ExitCode::from(code)
        }
    }
}
