//! `diver`: dual-stage dataset distillation on synthetic 2-D tasks.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::RunConfig;

const DEFAULT_OUT: &str = "diver-out";

#[derive(Parser)]
#[command(name = "diver", version, about = "Distill a labeled dataset, then refine it with latent diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Run config (TOML), or a `*.manifest.json` to rerun with its recorded
    /// config [default: built-in defaults]
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Global seed; overrides the config file [default: 0]
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory; overrides the config file, then $DIVER_OUT
    /// [default: diver-out]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Use this distilled dataset instead of running Stage I
    /// [default: none]
    #[arg(long, global = true, value_name = "PATH")]
    from_distilled: Option<PathBuf>,

    /// Worker threads [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the dataset and write the train/test splits
    GenData,
    /// Train the encoder/decoder pair on the train split
    TrainCodec,
    /// Train the conditional noise predictor in latent space
    TrainDenoiser,
    /// Stage I: distribution-matching distillation, plus a random coreset
    Distill,
    /// Stage II: refine the distilled set through the diffusion sampler
    Refine,
    /// Train the classifier zoo on every candidate set and report accuracy
    Evaluate,
    /// Run every stage in order
    Pipeline,
}

fn resolve(common: &Common) -> Result<Ctx> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os("DIVER_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
    cfg.out = Some(out.clone());
    Ok(Ctx {
        cfg,
        out,
        from_distilled: common.from_distilled.clone(),
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        anyhow::ensure!(n >= 1, "--threads must be >= 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let ctx = resolve(&cli.common)?;
    match cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::TrainCodec => commands::train_codec_cmd(&ctx),
        Command::TrainDenoiser => commands::train_denoiser_cmd(&ctx),
        Command::Distill => commands::distill_cmd(&ctx),
        Command::Refine => commands::refine_cmd(&ctx),
        Command::Evaluate => commands::evaluate_cmd(&ctx),
        Command::Pipeline => commands::pipeline(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
