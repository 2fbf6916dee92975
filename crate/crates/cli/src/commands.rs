//! One function per subcommand. Each reads its inputs from the output
//! directory, writes its artifacts there, and records a manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use diver_core::codec::{train_codec, Codec};
use diver_core::datagen::{generate, split, LabeledDataset};
use diver_core::denoiser::{train_denoiser, EpsilonModel};
use diver_core::distill::{distill, random_coreset};
use diver_core::evaluate::{default_zoo, evaluate_dataset, write_scatter, EvalReport};
use diver_core::refine::refine_dataset;

use crate::artifacts::{self as art, require, write_loss_csv, Manifest};
use crate::config::RunConfig;

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub from_distilled: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn load(&self, name: &str) -> Result<LabeledDataset> {
        let path = require(&self.out, name)?;
        Ok(LabeledDataset::load(&path)?)
    }

    fn save(&self, ds: &LabeledDataset, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        ds.save(&path)?;
        Ok(path)
    }

    fn manifest(&self, command: &str, inputs: &[PathBuf], outputs: &[PathBuf], start: Instant) -> Result<()> {
        Manifest::write(
            &self.out,
            command,
            &self.cfg,
            self.from_distilled.as_deref(),
            inputs,
            outputs,
            start.elapsed(),
        )?;
        eprintln!("[{command}] done in {:.1}s", start.elapsed().as_secs_f64());
        Ok(())
    }

    /// The distilled set: `--from-distilled` if given, else the output of
    /// `distill`.
    fn distilled_path(&self) -> Result<PathBuf> {
        match &self.from_distilled {
            Some(p) if p.is_file() => Ok(p.clone()),
            Some(p) => bail!("--from-distilled file {} does not exist", p.display()),
            None => require(&self.out, art::DISTILLED),
        }
    }
}

pub fn gen_data(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    let ds = generate(&ctx.cfg.data_spec())?;
    let (train, test) = split(&ds, ctx.cfg.data.train_fraction, ctx.cfg.split_seed())?;
    let outputs = vec![
        ctx.save(&train.with_name("train"), art::TRAIN)?,
        ctx.save(&test.with_name("test"), art::TEST)?,
    ];
    ctx.manifest("gen-data", &[], &outputs, start)
}

pub fn train_codec_cmd(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    let train = ctx.load(art::TRAIN)?;
    let trained = train_codec(&train, &ctx.cfg.codec_config())?;
    let mse = trained.codec.reconstruction_mse(&train)?;
    eprintln!(
        "[train-codec] reconstruction mse {mse:.5} (data variance {:.4})",
        train.mean_variance() * train.dim() as f64
    );
    let ckpt = ctx.path(art::CODEC);
    trained.codec.save(&ckpt)?;
    let loss = ctx.path(art::CODEC_LOSS);
    write_loss_csv(&loss, "epoch,loss", trained.loss_trace.iter().map(|&l| vec![l]))?;
    ctx.manifest("train-codec", &[ctx.path(art::TRAIN)], &[ckpt, loss], start)
}

pub fn train_denoiser_cmd(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    let train = ctx.load(art::TRAIN)?;
    let codec = Codec::load(&require(&ctx.out, art::CODEC)?)?;
    let schedule = ctx.cfg.schedule()?;
    let grid = ctx.cfg.grid(&schedule)?;
    let latents = codec.encode_batch(train.features.view())?;
    let trained = train_denoiser(
        latents.view(),
        &train.labels,
        train.num_classes,
        &schedule,
        &grid,
        &ctx.cfg.denoiser_arch(),
        &ctx.cfg.denoiser_train(),
    )?;
    if let (Some(first), Some(last)) = (trained.loss_trace.first(), trained.loss_trace.last()) {
        eprintln!("[train-denoiser] epoch loss {first:.4} -> {last:.4}");
    }
    let ckpt = ctx.path(art::DENOISER);
    trained.model.save(&ckpt)?;
    let loss = ctx.path(art::DENOISER_LOSS);
    write_loss_csv(&loss, "epoch,loss", trained.loss_trace.iter().map(|&l| vec![l]))?;
    ctx.manifest(
        "train-denoiser",
        &[ctx.path(art::TRAIN), ctx.path(art::CODEC)],
        &[ckpt, loss],
        start,
    )
}

pub fn distill_cmd(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    let train = ctx.load(art::TRAIN)?;
    let cfg = ctx.cfg.distill_config();
    let outcome = distill(&train, &cfg)?;
    let coreset = random_coreset(&train, cfg.ipc, ctx.cfg.coreset_seed())?;
    if let (Some(first), Some(last)) = (outcome.dm_trace.first(), outcome.dm_trace.last()) {
        eprintln!("[distill] dm loss {first:.5} -> {last:.5}");
    }
    let loss = ctx.path(art::DISTILL_LOSS);
    let rows = outcome
        .dm_trace
        .iter()
        .zip(&outcome.hook_trace)
        .map(|(&d, &h)| vec![d, h]);
    write_loss_csv(&loss, "iteration,dm_loss,hook_loss", rows)?;
    let outputs = vec![
        ctx.save(&outcome.distilled.with_name("distilled"), art::DISTILLED)?,
        ctx.save(&coreset.with_name("coreset"), art::CORESET)?,
        loss,
    ];
    ctx.manifest("distill", &[ctx.path(art::TRAIN)], &outputs, start)
}

pub fn refine_cmd(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    let distilled_path = ctx.distilled_path()?;
    let distilled = LabeledDataset::load(&distilled_path)?.with_name("distilled");
    let codec_path = require(&ctx.out, art::CODEC)?;
    let denoiser_path = require(&ctx.out, art::DENOISER)?;
    let codec = Codec::load(&codec_path)?;
    let model = EpsilonModel::load(&denoiser_path)?;
    let schedule = ctx.cfg.schedule()?;
    let grid = ctx.cfg.grid(&schedule)?;
    let synthetic = refine_dataset(&distilled, &codec, &model, &schedule, &grid, &ctx.cfg.refine_config())?;
    let reconstructed = codec.reconstruct(&distilled, "reconstructed")?;
    let outputs = vec![
        ctx.save(&synthetic.with_name("synthetic"), art::SYNTHETIC)?,
        ctx.save(&reconstructed, art::RECONSTRUCTED)?,
    ];
    ctx.manifest("refine", &[distilled_path, codec_path, denoiser_path], &outputs, start)
}

pub fn evaluate_cmd(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    let test_path = require(&ctx.out, art::TEST)?;
    let test = LabeledDataset::load(&test_path)?;
    let mut candidates: Vec<(PathBuf, &str)> = Vec::new();
    for name in art::CANDIDATES {
        let path = if name == art::DISTILLED && ctx.from_distilled.is_some() {
            ctx.distilled_path()?
        } else {
            ctx.path(name)
        };
        if path.is_file() {
            candidates.push((path, name.trim_end_matches(".ds")));
        }
    }
    if candidates.is_empty() {
        bail!(
            "no candidate datasets in {}: produce them with `diver distill` and `diver refine`",
            ctx.out.display()
        );
    }
    let eval = ctx.cfg.eval_config();
    let zoo = default_zoo(&eval);
    let mut report = EvalReport::default();
    let mut inputs = vec![test_path];
    let mut outputs = Vec::new();
    for (path, name) in &candidates {
        let ds = LabeledDataset::load(path)?.with_name(*name);
        let part = evaluate_dataset(&ds, &test, &zoo, eval.trials).with_context(|| format!("evaluating {name}"))?;
        report.extend(part)?;
        let svg = ctx.path(&format!("scatter_{name}.svg"));
        write_scatter(&ds, &svg)?;
        outputs.push(svg);
        inputs.push(path.clone());
    }
    let csv = ctx.path(art::REPORT);
    report.write_csv(&csv)?;
    let summary = ctx.path(art::SUMMARY);
    report.write_summary(&summary)?;
    print!("{}", report.summary());
    outputs.push(csv);
    outputs.push(summary);
    ctx.manifest("evaluate", &inputs, &outputs, start)
}

/// Runs every stage in order, stopping at the first failure.
///
/// With `--from-distilled`, data generation and distillation are skipped:
/// the train/test splits must already be in the output directory, the given
/// file becomes the distilled set, and a random coreset of matching size is
/// drawn for comparison. Existing codec and denoiser checkpoints are reused.
pub fn pipeline(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    let stage = |name: &str, f: fn(&Ctx) -> Result<()>| f(ctx).with_context(|| format!("stage {name} failed"));
    match &ctx.from_distilled {
        None => {
            stage("gen-data", gen_data)?;
            stage("train-codec", train_codec_cmd)?;
            stage("train-denoiser", train_denoiser_cmd)?;
            stage("distill", distill_cmd)?;
        }
        Some(given) => {
            require(&ctx.out, art::TRAIN).context("--from-distilled needs the train split")?;
            require(&ctx.out, art::TEST).context("--from-distilled needs the test split")?;
            let distilled = LabeledDataset::load(ctx.distilled_path()?.as_path())?;
            copy_distilled(given, &ctx.path(art::DISTILLED))?;
            let train = ctx.load(art::TRAIN)?;
            let ipc = distilled.class_counts().into_iter().min().unwrap_or(1).max(1);
            ctx.save(
                &random_coreset(&train, ipc, ctx.cfg.coreset_seed())?.with_name("coreset"),
                art::CORESET,
            )?;
            if !ctx.path(art::CODEC).is_file() {
                stage("train-codec", train_codec_cmd)?;
            }
            if !ctx.path(art::DENOISER).is_file() {
                stage("train-denoiser", train_denoiser_cmd)?;
            }
        }
    }
    stage("refine", refine_cmd)?;
    stage("evaluate", evaluate_cmd)?;
    let outputs: Vec<PathBuf> = [art::CODEC, art::DENOISER, art::REPORT]
        .iter()
        .chain(art::CANDIDATES.iter())
        .map(|n| ctx.path(n))
        .collect();
    ctx.manifest("pipeline", &[], &outputs, start)
}

fn copy_distilled(from: &Path, to: &Path) -> Result<()> {
    let same = match (from.canonicalize(), to.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if !same {
        std::fs::copy(from, to).with_context(|| format!("copying {} to {}", from.display(), to.display()))?;
    }
    Ok(())
}
