//! `gebd`: synthesize feature corpora, train, run inference and evaluate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "gebd", version, about = "Generic event boundary detection from multi-stage frame features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file of `key = value` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set d_out=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Frames per second of the features.
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus of feature files plus annotations.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of videos.
        #[arg(long)]
        videos: Option<usize>,
        /// Frames per video.
        #[arg(long)]
        frames: Option<usize>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes checkpoint.gebw and loss.csv.
    Train {
        /// Directory of .gebf files.
        #[arg(long)]
        data: PathBuf,
        /// Annotation JSON; defaults to DATA/annotations.json.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score videos and pick boundaries.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A .gebf file or a directory of them.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip Gaussian smoothing before peak picking.
        #[arg(long, conflicts_with = "smooth_inference")]
        no_smooth: bool,
        /// Smooth before peak picking even if the config turns it off.
        #[arg(long)]
        smooth_inference: bool,
        /// Score 10 s clips with 5 s overlap and sum them.
        #[arg(long)]
        clip_mode: bool,
        #[command(flatten)]
        common: Common,
    },
    /// F1 over relative-distance thresholds; writes a CSV report.
    Eval {
        /// Directory of .detections.json files.
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Report CSV path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::resolve(common.config.as_deref(), &common.sets)?;
    if let Some(fps) = common.fps {
        cfg.fps = fps;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("GEBD_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("GEBD_THREADS must be a positive integer, got `{v}`"))?;
        anyhow::ensure!(n > 0, "GEBD_THREADS must be a positive integer, got `{v}`");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth {
            out,
            videos,
            frames,
            force,
            common,
        } => {
            let mut cfg = resolve(&common)?;
            cfg.videos = videos.unwrap_or(cfg.videos);
            cfg.frames = frames.unwrap_or(cfg.frames);
            commands::synth(&cfg, &out, force)
        }
        Command::Train {
            data,
            annotations,
            out,
            epochs,
            common,
        } => {
            let mut cfg = resolve(&common)?;
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            commands::train_cmd(&cfg, &data, annotations.as_deref(), &out)
        }
        Command::Infer {
            checkpoint,
            features,
            out,
            no_smooth,
            smooth_inference,
            clip_mode,
            common,
        } => {
            let mut cfg = resolve(&common)?;
            cfg.smooth_inference = (cfg.smooth_inference || smooth_inference) && !no_smooth;
            cfg.clip_mode |= clip_mode;
            commands::infer(&cfg, &checkpoint, &features, &out)
        }
        Command::Eval {
            detections,
            annotations,
            out,
            common,
        } => commands::eval(&resolve(&common)?, &detections, &annotations, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gebd: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
