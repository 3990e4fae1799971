//! Command-line front end. Every subcommand reads one experiment config and
//! writes its artifacts into the `--out` directory.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "corrvis", version, about = "Correlated-photon illumination: simulate, calibrate, train and evaluate")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-pixel correlated versus uncorrelated error sweep.
    Toy,
    /// Synthetic object datasets.
    Dataset {
        #[command(subcommand)]
        action: DatasetCommand,
    },
    /// Simulate one frame set of the configured source and object.
    Simulate,
    /// Fit phasematching parameters to measured mean fields.
    FitPm {
        /// Measurement container.
        #[arg(long)]
        measurements: PathBuf,
    },
    /// Fit the EM gain to a pixel-value histogram.
    CalibrateGain {
        /// Two-column text file: value, count.
        #[arg(long)]
        histogram: PathBuf,
    },
    /// Train the source and classifier.
    Train,
    /// Accuracy surface over photon budget and shots.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Class probabilities for stored frame sets, printed as JSON.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        frames: PathBuf,
    },
    /// Per-object pair transmission before and after training.
    CorrelationAudit {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
    },
    /// Accuracy against uniform photon loss.
    LossSweep {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Write the dataset manifest and masks.
    Generate,
}

/// Exit code for an error: configuration problems are 2, everything else 3.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(threads) = cli.global.threads {
        if threads == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // a second call within one process keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let cfg = load_config(&cli.global)?;
    std::fs::create_dir_all(&cli.global.out)?;
    let ctx = commands::Context::new(cfg, cli.global.out.clone());
    match &cli.command {
        Command::Toy => ctx.toy(),
        Command::Dataset { action: DatasetCommand::Generate } => ctx.dataset_generate(),
        Command::Simulate => ctx.simulate(),
        Command::FitPm { measurements } => ctx.fit_pm(measurements),
        Command::CalibrateGain { histogram } => ctx.calibrate_gain(histogram),
        Command::Train => ctx.train(),
        Command::Eval { checkpoint } => ctx.eval(checkpoint),
        Command::Infer { checkpoint, frames } => ctx.infer(checkpoint, frames),
        Command::CorrelationAudit { before, after } => ctx.correlation_audit(before, after),
        Command::LossSweep { checkpoint } => ctx.loss_sweep(checkpoint),
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("corrvis: {e}");
            exit_code(&e)
        }
    }
}
