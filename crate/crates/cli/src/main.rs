//! `somo`: generate synthetic scenes, train, predict, evaluate and check
//! gradients.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use somo_core::SomoError;

use crate::config::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "somo", version, about = "Multi-person 3D motion prediction")]
struct Cli {
    /// TOML (or .json) configuration file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic scenes as scene_{index}.json.
    Gen(GenArgs),
    /// Train on a directory of scenes.
    Train(TrainArgs),
    /// Roll out a trained model on one scene.
    Predict(PredictArgs),
    /// Compare a predicted scene with the truth.
    Eval(EvalArgs),
    /// Verify model gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    count: Option<usize>,
    /// Frames per scene.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory of scene files.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Frames to predict (at most 30).
    #[arg(long)]
    horizon: Option<usize>,
    /// First observed frame (default: observe the last frames of the scene).
    #[arg(long)]
    start: Option<usize>,
    /// Predicted scene file (default: <out>/prediction.json).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the first decoder layer's cross-attention as CSV.
    #[arg(long)]
    attention: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Truth frame aligned with the first predicted frame.
    #[arg(long)]
    truth_offset: Option<usize>,
    /// Comma-separated horizons in seconds.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Sampled scalars per parameter group.
    #[arg(long)]
    per_group: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
}

fn apply_flags(cli: &Cli, c: &mut CliConfig) {
    if cli.seed.is_some() {
        c.seed = cli.seed;
    }
    if cli.out.is_some() {
        c.out = cli.out.clone();
    }
    fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
        if let Some(v) = src {
            *dst = v.clone();
        }
    }
    fn set_opt<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
        if src.is_some() {
            *dst = src.clone();
        }
    }
    match &cli.command {
        Command::Gen(a) => {
            set(&mut c.gen.count, &a.count);
            set(&mut c.scene.frames, &a.frames);
        }
        Command::Train(a) => {
            set_opt(&mut c.paths.data_dir, &a.data);
            set(&mut c.train.epochs, &a.epochs);
            set(&mut c.train.batch_size, &a.batch_size);
            set(&mut c.train.learning_rate, &a.lr);
            set(&mut c.model.dropout, &a.dropout);
            set_opt(&mut c.train.grad_clip, &a.grad_clip);
            set_opt(&mut c.paths.checkpoint_dir, &a.checkpoint_dir);
            set_opt(&mut c.paths.resume, &a.resume);
        }
        Command::Predict(a) => {
            set_opt(&mut c.predict.checkpoint, &a.checkpoint);
            set_opt(&mut c.predict.scene, &a.scene);
            set(&mut c.predict.horizon, &a.horizon);
            set_opt(&mut c.predict.start, &a.start);
            set_opt(&mut c.predict.output, &a.output);
            set_opt(&mut c.predict.attention, &a.attention);
        }
        Command::Eval(a) => {
            set_opt(&mut c.eval.pred, &a.pred);
            set_opt(&mut c.eval.truth, &a.truth);
            set(&mut c.eval.truth_offset, &a.truth_offset);
            set_opt(&mut c.eval.horizons, &a.horizons);
        }
        Command::Gradcheck(a) => {
            set(&mut c.gradcheck.per_group, &a.per_group);
            set(&mut c.gradcheck.eps, &a.eps);
            set(&mut c.gradcheck.tolerance, &a.tolerance);
        }
    }
}

fn init_logging() -> Result<(), SomoError> {
    let level = std::env::var("SOMO_LOG_LEVEL").unwrap_or_else(|_| "info".into());
    let filter = match level.as_str() {
        "error" | "warn" | "info" | "debug" => level,
        other => {
            return Err(SomoError::Config(format!(
                "SOMO_LOG_LEVEL must be one of error, warn, info, debug; got {other:?}"
            )))
        }
    };
    env_logger::Builder::new()
        .parse_filters(&filter)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    init_logging()?;
    let mut config = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    apply_flags(cli, &mut config);
    match &cli.command {
        Command::Gen(_) => commands::generate(&config),
        Command::Train(_) => commands::train(&config),
        Command::Predict(_) => commands::predict(&config),
        Command::Eval(_) => commands::eval(&config),
        Command::Gradcheck(_) => commands::gradcheck(&config),
    }
}

/// 1 for invalid input or configuration, 2 for runtime and numerical
/// failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SomoError>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
