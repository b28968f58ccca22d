//! `blendfuse` command-line interface.

mod commands;
mod config;
mod error;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_CONFIG, EXIT_VALIDATION};
use crate::output::Outputs;

#[derive(Parser, Debug)]
#[command(name = "blendfuse", version, about = "Blended-emotion fusion, thresholds and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores); does not affect outputs
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// More log output (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[arg(long, global = true, help_heading = "Paths")]
    manifest: Option<PathBuf>,
    #[arg(long, global = true, help_heading = "Paths")]
    labels: Option<PathBuf>,
    #[arg(long, global = true, help_heading = "Paths")]
    folds: Option<PathBuf>,
    /// Directory of per-encoder prediction CSVs
    #[arg(long, global = true, help_heading = "Paths")]
    predictions: Option<PathBuf>,
    /// Feature manifest (video_id,actor_id,path)
    #[arg(long, global = true, help_heading = "Paths")]
    features_manifest: Option<PathBuf>,
    /// Aggregated feature table
    #[arg(long, global = true, help_heading = "Paths")]
    features: Option<PathBuf>,
    /// Fixed fusion weights (encoder,weight)
    #[arg(long, global = true, help_heading = "Paths")]
    weights: Option<PathBuf>,
    /// Results CSV (fold,acc_p,acc_s,score,n) to check
    #[arg(long, global = true, help_heading = "Paths")]
    results: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assign actors to k disjoint folds
    Split {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Write soft labels in the predictions format
    EncodeLabels,
    /// Pool frame features into one vector per video
    Aggregate,
    /// Train one MLP head per fold and write held-out predictions
    TrainMlp,
    /// Fit fusion weights and thresholds, cross-validate, write reports
    FuseEvaluate,
    /// Per-fold threshold surfaces at fixed weights
    Sensitivity,
    /// Generate a synthetic dataset
    Synth,
    /// Check Score = (ACC_P + ACC_S) / 2 and weight sums
    VerifyIdentities {
        #[arg(long, default_value_t = blendfuse::identities::SCORE_TOLERANCE)]
        tolerance: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Split { .. } => "split",
            Command::EncodeLabels => "encode-labels",
            Command::Aggregate => "aggregate",
            Command::TrainMlp => "train-mlp",
            Command::FuseEvaluate => "fuse-evaluate",
            Command::Sensitivity => "sensitivity",
            Command::Synth => "synth",
            Command::VerifyIdentities { .. } => "verify-identities",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let p = &mut cfg.paths;
    for (slot, flag) in [
        (&mut p.manifest, &c.manifest),
        (&mut p.labels, &c.labels),
        (&mut p.folds, &c.folds),
        (&mut p.predictions_dir, &c.predictions),
        (&mut p.features_manifest, &c.features_manifest),
        (&mut p.features, &c.features),
        (&mut p.weights, &c.weights),
        (&mut p.results, &c.results),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Command::Split { k: Some(k) } = cli.command {
        cfg.split.k = k;
    }
    if let Some(seed) = c.seed.or(cfg.seed) {
        cfg.apply_seed(seed);
    }
    cfg.check_paths()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot set up thread pool: {e}")))?;
    }
    let cfg = resolve(&cli)?;
    let toml = cfg.to_toml()?;
    let mut out = Outputs::create(&cli.common.out, cli.command.name(), &cfg.hash()?)?;
    log::info!("{} config {}", cli.command.name(), out.config_hash());
    let ok = match cli.command {
        Command::Split { .. } => commands::split(&cfg, &mut out).map(|_| true),
        Command::EncodeLabels => commands::encode_labels(&cfg, &mut out).map(|_| true),
        Command::Aggregate => commands::aggregate_features(&cfg, &mut out).map(|_| true),
        Command::TrainMlp => commands::train_mlp(&cfg, &mut out).map(|_| true),
        Command::FuseEvaluate => commands::fuse_evaluate(&cfg, &mut out).map(|_| true),
        Command::Sensitivity => commands::sensitivity(&cfg, &mut out).map(|_| true),
        Command::Synth => commands::synth(&cfg, &mut out).map(|_| true),
        Command::VerifyIdentities { tolerance } => {
            if !(tolerance.is_finite() && tolerance >= 0.0) {
                return Err(CliError::config(format!("--tolerance must be non-negative, got {tolerance}")));
            }
            commands::verify_identities(&cfg, tolerance, &mut out)
        }
    }?;
    out.finish(&toml)?;
    if ok {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_VALIDATION,
            message: "identity check failed".into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    let level = match cli.common.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
