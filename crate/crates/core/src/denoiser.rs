//! Class-conditional noise predictor with a null label, its training loop,
//! and the classifier-free guidance combination.
//!
//! The trunk sees `concat(z_t, time_embed[t], class_embed[label])`, where
//! `time_embed` has one learned row per grid step and `class_embed` has
//! `C + 1` rows, the last one being the null label.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::Checkpoint;
use crate::nn::{Activation, Mlp, MlpGrad};
use crate::rng::{self, streams};
use crate::schedule::{NoiseSchedule, StepGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Class(usize),
    Null,
}

impl Label {
    /// Row of `class_embed` used for this label.
    pub fn row(self, num_classes: usize) -> usize {
        match self {
            Label::Class(c) => c,
            Label::Null => num_classes,
        }
    }

    /// Inverse of [`Label::row`]: `0..C` are classes, `C` is the null label.
    pub fn from_row(row: usize, num_classes: usize) -> Result<Self> {
        match row {
            r if r < num_classes => Ok(Label::Class(r)),
            r if r == num_classes => Ok(Label::Null),
            r => Err(Error::IndexOutOfRange {
                what: "label",
                index: r,
                valid: format!("0..={num_classes}"),
            }),
        }
    }
}

/// Anything that predicts the noise in `z_t` at grid step `t`.
pub trait NoisePredictor: Sync {
    fn latent_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn predict_eps(&self, z_t: &[f64], t: usize, label: Label) -> Result<Vec<f64>>;
}

/// `(1 - omega) * eps(null) + omega * eps(class)`, i.e.
/// `eps(null) + omega * (eps(class) - eps(null))`. The first form makes
/// `omega = 1` and `omega = 0` reproduce the two base predictions exactly.
pub fn cfg_eps<P: NoisePredictor + ?Sized>(
    model: &P,
    z_t: &[f64],
    t: usize,
    class: usize,
    omega: f64,
) -> Result<Vec<f64>> {
    if class >= model.num_classes() {
        return Err(Error::IndexOutOfRange {
            what: "class",
            index: class,
            valid: format!("0..{}", model.num_classes()),
        });
    }
    let cond = model.predict_eps(z_t, t, Label::Class(class))?;
    let uncond = model.predict_eps(z_t, t, Label::Null)?;
    Ok(uncond
        .iter()
        .zip(&cond)
        .map(|(u, c)| (1.0 - omega) * u + omega * c)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserArch {
    pub embed_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        DenoiserArch {
            embed_dim: 16,
            hidden_width: 128,
            hidden_layers: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub null_drop_prob: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 600,
            batch_size: 256,
            lr: 0.05,
            null_drop_prob: 0.1,
            clip_norm: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonModel {
    latent_dim: usize,
    num_classes: usize,
    time_embed: Array2<f64>,
    class_embed: Array2<f64>,
    trunk: Mlp,
}

#[derive(Debug, Clone)]
pub struct DenoiserGrad {
    pub trunk: MlpGrad,
    pub time_embed: Array2<f64>,
    pub class_embed: Array2<f64>,
}

impl DenoiserGrad {
    pub fn norm_sq(&self) -> f64 {
        self.trunk.norm_sq()
            + self.time_embed.iter().map(|v| v * v).sum::<f64>()
            + self.class_embed.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn scale(&mut self, factor: f64) {
        self.trunk.scale(factor);
        self.time_embed *= factor;
        self.class_embed *= factor;
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.trunk.flatten();
        out.extend(self.time_embed.iter());
        out.extend(self.class_embed.iter());
        out
    }
}

impl EpsilonModel {
    pub fn new(
        latent_dim: usize,
        num_classes: usize,
        num_steps: usize,
        arch: &DenoiserArch,
        seed: u64,
    ) -> Result<Self> {
        if latent_dim == 0 || num_classes == 0 || num_steps == 0 || arch.embed_dim == 0 {
            return Err(Error::invalid("denoiser dimensions must all be >= 1"));
        }
        let mut r = rng::stream(seed, streams::DENOISER_INIT);
        let e = arch.embed_dim;
        let mut sizes = vec![latent_dim + 2 * e];
        sizes.extend(std::iter::repeat_n(arch.hidden_width, arch.hidden_layers));
        sizes.push(latent_dim);
        let trunk = Mlp::new(&sizes, Activation::Tanh, &mut r)?;
        let time_embed = Array2::from_shape_fn((num_steps, e), |_| rng::normal(&mut r));
        let class_embed = Array2::from_shape_fn((num_classes + 1, e), |_| rng::normal(&mut r));
        Ok(EpsilonModel {
            latent_dim,
            num_classes,
            time_embed,
            class_embed,
            trunk,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.time_embed.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.time_embed.ncols()
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn class_embed(&self) -> &Array2<f64> {
        &self.class_embed
    }

    pub fn zero_output_layer(&mut self) {
        self.trunk.zero_output_layer();
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::IndexOutOfRange {
                what: "grid step",
                index: t,
                valid: format!("1..={}", self.num_steps()),
            });
        }
        Ok(())
    }

    fn check_label(&self, label: Label) -> Result<()> {
        if let Label::Class(c) = label {
            if c >= self.num_classes {
                return Err(Error::IndexOutOfRange {
                    what: "label",
                    index: c,
                    valid: format!("0..={} (the last is null)", self.num_classes),
                });
            }
        }
        Ok(())
    }

    fn build_input(&self, z_t: ArrayView2<f64>, steps: &[usize], labels: &[Label]) -> Result<Array2<f64>> {
        let b = z_t.nrows();
        if z_t.ncols() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                context: "denoiser latent",
                expected: self.latent_dim,
                actual: z_t.ncols(),
            });
        }
        if steps.len() != b || labels.len() != b {
            return Err(Error::DimensionMismatch {
                context: "denoiser batch conditioning",
                expected: b,
                actual: steps.len().min(labels.len()),
            });
        }
        let (d, e) = (self.latent_dim, self.embed_dim());
        let mut x = Array2::zeros((b, d + 2 * e));
        x.slice_mut(s![.., ..d]).assign(&z_t);
        for i in 0..b {
            self.check_step(steps[i])?;
            self.check_label(labels[i])?;
            x.slice_mut(s![i, d..d + e]).assign(&self.time_embed.row(steps[i] - 1));
            x.slice_mut(s![i, d + e..])
                .assign(&self.class_embed.row(labels[i].row(self.num_classes)));
        }
        Ok(x)
    }

    pub fn predict_batch(&self, z_t: ArrayView2<f64>, steps: &[usize], labels: &[Label]) -> Result<Array2<f64>> {
        let x = self.build_input(z_t, steps, labels)?;
        Ok(self.trunk.forward(x.view()))
    }

    /// Mean over all entries of `(eps_hat - target)^2` and its gradient.
    pub fn loss_and_grad(
        &self,
        z_t: ArrayView2<f64>,
        steps: &[usize],
        labels: &[Label],
        target: ArrayView2<f64>,
    ) -> Result<(f64, DenoiserGrad)> {
        let x = self.build_input(z_t, steps, labels)?;
        let trace = self.trunk.forward_traced(x.view());
        let resid = trace.output() - &target;
        let count = resid.len() as f64;
        let loss = resid.mapv(|v| v * v).sum() / count;
        let d_out = resid * (2.0 / count);
        let (trunk, d_in) = self.trunk.backward(&trace, d_out.view());
        let (d, e) = (self.latent_dim, self.embed_dim());
        let mut time_embed = Array2::zeros(self.time_embed.raw_dim());
        let mut class_embed = Array2::zeros(self.class_embed.raw_dim());
        for i in 0..steps.len() {
            let mut row = time_embed.row_mut(steps[i] - 1);
            row += &d_in.slice(s![i, d..d + e]);
            let mut row = class_embed.row_mut(labels[i].row(self.num_classes));
            row += &d_in.slice(s![i, d + e..]);
        }
        Ok((
            loss,
            DenoiserGrad {
                trunk,
                time_embed,
                class_embed,
            },
        ))
    }

    pub fn apply_gradient(&mut self, grad: &DenoiserGrad, lr: f64) {
        self.trunk.apply_gradient(&grad.trunk, lr);
        self.time_embed.scaled_add(-lr, &grad.time_embed);
        self.class_embed.scaled_add(-lr, &grad.class_embed);
    }

    /// Trunk parameters, then time embeddings, then class embeddings.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.trunk.flat_params();
        p.extend(self.time_embed.iter());
        p.extend(self.class_embed.iter());
        p
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        let n = self.trunk.num_params();
        let (nt, nc) = (self.time_embed.len(), self.class_embed.len());
        if params.len() != n + nt + nc {
            return Err(Error::DimensionMismatch {
                context: "denoiser parameter vector",
                expected: n + nt + nc,
                actual: params.len(),
            });
        }
        self.trunk.set_flat_params(&params[..n])?;
        self.time_embed
            .iter_mut()
            .zip(&params[n..n + nt])
            .for_each(|(a, b)| *a = *b);
        self.class_embed
            .iter_mut()
            .zip(&params[n + nt..])
            .for_each(|(a, b)| *a = *b);
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({
            "kind": "denoiser",
            "latent_dim": self.latent_dim,
            "num_classes": self.num_classes,
            "num_steps": self.num_steps(),
            "embed_dim": self.embed_dim(),
            "activation": self.trunk.activation(),
        }));
        ck.push(
            "time_embed",
            vec![self.time_embed.nrows(), self.time_embed.ncols()],
            self.time_embed.iter().copied().collect(),
        );
        ck.push(
            "class_embed",
            vec![self.class_embed.nrows(), self.class_embed.ncols()],
            self.class_embed.iter().copied().collect(),
        );
        self.trunk.push_to(&mut ck, "trunk");
        ck
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(path, &Checkpoint::load(path)?)
    }

    pub fn from_checkpoint(path: &Path, ck: &Checkpoint) -> Result<Self> {
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            reason,
        };
        if ck.meta.get("kind").and_then(|v| v.as_str()) != Some("denoiser") {
            return Err(malformed("not a denoiser checkpoint".into()));
        }
        let get = |key: &str| {
            ck.meta
                .get(key)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| malformed(format!("missing {key}")))
        };
        let (latent_dim, num_classes, num_steps, e) =
            (get("latent_dim")?, get("num_classes")?, get("num_steps")?, get("embed_dim")?);
        let activation = ck
            .meta
            .get("activation")
            .and_then(|v| v.as_str())
            .map(Activation::parse)
            .transpose()?
            .unwrap_or(Activation::Tanh);
        let te = ck.expect(path, "time_embed", &[num_steps, e])?;
        let ce = ck.expect(path, "class_embed", &[num_classes + 1, e])?;
        let trunk = Mlp::read_from(ck, path, "trunk", activation)?;
        if trunk.input_dim() != latent_dim + 2 * e || trunk.output_dim() != latent_dim {
            return Err(Error::ShapeMismatch {
                path: path.to_path_buf(),
                reason: "trunk shape disagrees with latent_dim/embed_dim".into(),
            });
        }
        Ok(EpsilonModel {
            latent_dim,
            num_classes,
            time_embed: Array2::from_shape_vec((num_steps, e), te.data.clone()).expect("shape checked"),
            class_embed: Array2::from_shape_vec((num_classes + 1, e), ce.data.clone()).expect("shape checked"),
            trunk,
        })
    }
}

impl NoisePredictor for EpsilonModel {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_eps(&self, z_t: &[f64], t: usize, label: Label) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, z_t.len()), z_t).expect("row shape");
        let out = self.predict_batch(view, &[t], &[label])?;
        Ok(out.into_raw_vec_and_offset().0)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDenoiser {
    pub model: EpsilonModel,
    /// Mean minibatch loss of every epoch.
    pub loss_trace: Vec<f64>,
}

/// Minibatch gradient descent on the noise-prediction loss.
///
/// Every sample draws a grid step uniformly from `1..=K`, fresh Gaussian
/// noise, and has its label replaced by the null label with probability
/// `null_drop_prob`. The global gradient norm is clipped to `clip_norm`.
pub fn train_denoiser(
    latents: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    arch: &DenoiserArch,
    cfg: &TrainConfig,
) -> Result<TrainedDenoiser> {
    let n = latents.nrows();
    if n == 0 {
        return Err(Error::invalid("denoiser training set is empty"));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "denoiser labels",
            expected: n,
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::IndexOutOfRange {
            what: "label",
            index: bad,
            valid: format!("0..{num_classes}"),
        });
    }
    if latents.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("denoiser latents must be finite"));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.null_drop_prob) || !(cfg.clip_norm > 0.0) {
        return Err(Error::invalid(
            "denoiser training needs batch_size >= 1, lr > 0, null_drop_prob in [0, 1), clip_norm > 0",
        ));
    }
    let k = grid.num_steps();
    let d = latents.ncols();
    let mut model = EpsilonModel::new(d, num_classes, k, arch, cfg.seed)?;
    let mut r = rng::stream(cfg.seed, streams::DENOISER_BATCHES);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng::shuffle(&mut r, &mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut z_t = Array2::zeros((b, d));
            let mut eps = Array2::zeros((b, d));
            let mut steps = Vec::with_capacity(b);
            let mut conds = Vec::with_capacity(b);
            for (row, &i) in chunk.iter().enumerate() {
                let t = 1 + rng::below(&mut r, k);
                let a = grid.alpha_bar(schedule, t)?;
                let (signal, noise) = (a.sqrt(), (1.0 - a).sqrt());
                for j in 0..d {
                    let e = rng::normal(&mut r);
                    eps[[row, j]] = e;
                    z_t[[row, j]] = signal * latents[[i, j]] + noise * e;
                }
                steps.push(t);
                conds.push(if rng::uniform(&mut r) < cfg.null_drop_prob {
                    Label::Null
                } else {
                    Label::Class(labels[i])
                });
            }
            let (loss, mut grad) = model.loss_and_grad(z_t.view(), &steps, &conds, eps.view())?;
            if !loss.is_finite() {
                return Err(Error::Divergence { stage: "denoiser", epoch });
            }
            let norm = grad.norm_sq().sqrt();
            if !norm.is_finite() {
                return Err(Error::Divergence { stage: "denoiser", epoch });
            }
            if norm > cfg.clip_norm {
                grad.scale(cfg.clip_norm / norm);
            }
            model.apply_gradient(&grad, cfg.lr);
            total += loss;
            batches += 1;
        }
        trace.push(total / batches as f64);
    }
    Ok(TrainedDenoiser {
        model,
        loss_trace: trace,
    })
}
