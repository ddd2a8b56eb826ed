mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::FileConfig;

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit 2).
    Usage(anyhow::Error),
    /// Anything that went wrong while running (exit 1).
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<scan_core::Error> for CliError {
    fn from(e: scan_core::Error) -> Self {
        match e {
            scan_core::Error::Config(_) => CliError::Usage(e.into()),
            _ => CliError::Runtime(e.into()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "scan",
    version,
    about = "Cross-modal image/recipe embedding: data, training, evaluation and ablations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<FileConfig, CliError> {
        let mut cfg = FileConfig::load(&self.config)?;
        cfg.override_seed(self.seed);
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus and write train/val/test record files.
    SynthData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train, select by validation, evaluate on the test split.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory for the checkpoint and reports.
        #[arg(short, long)]
        out: PathBuf,
        /// Continue from `<out>/checkpoint.bin` up to `train.max_epochs`.
        #[arg(long)]
        resume: bool,
        /// Write per-sample attention weights of test recipes to attention.json.
        #[arg(long)]
        dump_attention: bool,
        /// Number of test recipes in the attention dump.
        #[arg(long, default_value_t = 10)]
        attention_samples: usize,
    },
    /// Evaluate a checkpoint on a data split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_parser = ["train", "val", "test"], default_value = "test")]
        split: String,
        #[arg(long)]
        dump_attention: bool,
        #[arg(long, default_value_t = 10)]
        attention_samples: usize,
    },
    /// Finite-difference check of the full training loss on a random batch.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 16)]
        joint_dim: usize,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 0.05)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every ablation cell on the same data and tabulate them.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        out: PathBuf,
        /// Only triplet-loss cells (skip the cosine-loss rows).
        #[arg(long)]
        triplet_only: bool,
    },
    /// One training run per semantic-consistency weight.
    LambdaSweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.1, 0.5])]
        lambdas: Vec<f64>,
    },
    /// Per-epoch CSV and tables from a training run directory.
    Report {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Where to write metrics.csv (defaults to the run directory).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SynthData { config, out } => commands::synth_data(&config.load()?, &out),
        Command::Train {
            config,
            out,
            resume,
            dump_attention,
            attention_samples,
        } => commands::train(
            &config.load()?,
            &out,
            resume,
            dump_attention.then_some(attention_samples),
        ),
        Command::Eval {
            config,
            checkpoint,
            out,
            split,
            dump_attention,
            attention_samples,
        } => commands::eval(
            &config.load()?,
            &checkpoint,
            &out,
            &split,
            dump_attention.then_some(attention_samples),
        ),
        Command::Gradcheck {
            batch,
            joint_dim,
            classes,
            lambda,
            step,
            tolerance,
            seed,
            out,
        } => commands::gradcheck(
            scan_core::gradcheck::LossCheckSetup {
                batch_size: batch,
                joint_dim,
                num_classes: classes,
                lambda,
                seed,
                ..Default::default()
            },
            step,
            tolerance,
            out.as_deref(),
        ),
        Command::Ablate {
            config,
            out,
            triplet_only,
        } => commands::ablate(&config.load()?, &out, triplet_only),
        Command::LambdaSweep { config, out, lambdas } => commands::lambda_sweep(&config.load()?, &out, &lambdas),
        Command::Report { run, out } => commands::report(&run, out.as_deref().unwrap_or(&run)),
    }
}

fn main() -> ExitCode {
    let defaults = format!(
        "Configuration defaults (every key optional):\n\n{}",
        FileConfig::default().to_toml()
    );
    let matches = Cli::command().after_long_help(defaults).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
