//! Stage II: refine distilled points through the latent diffusion sampler.
//!
//! For every distilled point `x0` with label `c`:
//!
//! 1. encode, `z0 = E(x0)`, and noise it to grid level `t_f`;
//! 2. start the reverse loop at grid step `t_r` from that latent (the noise
//!    level of the start latent and the step index differ whenever
//!    `t_f < t_r`, which keeps the trajectory close to `z0`);
//! 3. at every step take a DDIM update with classifier-free guided noise;
//!    inside the semantic window `t_l <= t <= t_h` subtract
//!    `gamma * (z_t - z0) * sigma_t` from the update;
//! 4. decode the final latent.
//!
//! Each sample owns an RNG stream derived from `(seed, sample index)`, so
//! parallel and serial runs agree bit for bit.

use std::fmt;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::datagen::LabeledDataset;
use crate::denoiser::{cfg_eps, Label, NoisePredictor};
use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};
use crate::schedule::{forward_noise, marginal_sigma, NoiseSchedule, StepGrid};

/// Which `sigma_t` scales the semantic guidance term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceSigma {
    /// `sqrt(1 - alpha_bar_t)`, positive at every step.
    Marginal,
    /// The DDIM injection std, which is zero when `eta = 0`.
    Ddim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub t_f: usize,
    pub t_r: usize,
    pub t_h: usize,
    pub t_l: usize,
    pub gamma: f64,
    pub omega: f64,
    pub guidance_sigma: GuidanceSigma,
    pub eta: f64,
    /// Start the reverse loop at `t_f` instead of `t_r`.
    pub start_at_t_f: bool,
    /// Inside the semantic window use the plain conditional prediction
    /// instead of classifier-free guidance.
    pub cfg_semantic_off: bool,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            t_f: 25,
            t_r: 50,
            t_h: 40,
            t_l: 25,
            gamma: 0.1,
            omega: 2.0,
            guidance_sigma: GuidanceSigma::Marginal,
            eta: 0.0,
            start_at_t_f: false,
            cfg_semantic_off: false,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self, num_sample_steps: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.t_r > num_sample_steps {
            return bad(format!("t_r = {} exceeds the {num_sample_steps}-step grid", self.t_r));
        }
        if self.t_f > self.t_r {
            return bad(format!("t_f = {} must be <= t_r = {}", self.t_f, self.t_r));
        }
        if self.t_l < 1 || self.t_l > self.t_h || self.t_h > self.t_r {
            return bad(format!(
                "need 1 <= t_l <= t_h <= t_r, got t_l = {}, t_h = {}, t_r = {}",
                self.t_l, self.t_h, self.t_r
            ));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !self.omega.is_finite() {
            return bad(format!("omega must be finite, got {}", self.omega));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return bad(format!("eta must be >= 0, got {}", self.eta));
        }
        Ok(())
    }

    pub fn phase(&self, t: usize) -> PhaseTag {
        if t > self.t_h {
            PhaseTag::Chaotic
        } else if t >= self.t_l {
            PhaseTag::Semantic
        } else {
            PhaseTag::Refinement
        }
    }

    /// First grid step of the reverse loop.
    pub fn start_step(&self) -> usize {
        if self.start_at_t_f {
            self.t_f
        } else {
            self.t_r
        }
    }
}

/// Phase of the reverse trajectory a grid step belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseTag {
    /// `t_h < t <= t_r`
    Chaotic,
    /// `t_l <= t <= t_h`, where semantic guidance applies
    Semantic,
    /// `1 <= t < t_l`
    Refinement,
}

impl fmt::Display for PhaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseTag::Chaotic => "chaotic",
            PhaseTag::Semantic => "semantic",
            PhaseTag::Refinement => "refinement",
        })
    }
}

/// Per-sample stream of the refinement noise.
pub fn sample_rng(seed: u64, index: usize) -> Rng {
    rng::stream(rng::mix(seed, index as u64), streams::REFINE)
}

/// Encodes `x0` and noises the latent to grid level `t_f`.
/// Returns `(z0, z_init)`.
pub fn inherit(
    codec: &Codec,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    x0: &[f64],
    t_f: usize,
    rng: &mut Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let z0 = codec.encode(x0)?;
    let eps = rng::normal_vec(rng, z0.len());
    let z_init = forward_noise(&z0, t_f, grid, schedule, &eps)?;
    Ok((z0, z_init))
}

/// Clean-latent estimate `(z_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)`.
pub fn predict_clean(eps: &[f64], z_t: &[f64], t: usize, schedule: &NoiseSchedule, grid: &StepGrid) -> Result<Vec<f64>> {
    let a = grid.alpha_bar(schedule, t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(z_t.iter().zip(eps).map(|(z, e)| (z - sn * e) / sa).collect())
}

/// One DDIM update from grid step `t` to `t_prev` given the predicted noise.
///
/// Draws from `rng` only when the injection std is positive.
pub fn ddim_step(
    eps: &[f64],
    z_t: &[f64],
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if eps.len() != z_t.len() {
        return Err(Error::DimensionMismatch {
            context: "ddim_step eps",
            expected: z_t.len(),
            actual: eps.len(),
        });
    }
    if t_prev >= t || t > grid.num_steps() {
        return Err(Error::invalid(format!(
            "ddim_step needs t_prev < t <= {}, got t = {t}, t_prev = {t_prev}",
            grid.num_steps()
        )));
    }
    let z0_hat = predict_clean(eps, z_t, t, schedule, grid)?;
    let a_prev = grid.alpha_bar(schedule, t_prev)?;
    let sigma = grid.ddim_sigma(schedule, t, t_prev)?;
    let dir_var = 1.0 - a_prev - sigma * sigma;
    let dir_var = if dir_var < 0.0 && dir_var > -1e-15 { 0.0 } else { dir_var };
    if dir_var < 0.0 {
        return Err(Error::InvalidEta { step: t, value: dir_var });
    }
    let (sa, sd) = (a_prev.sqrt(), dir_var.sqrt());
    let mut out: Vec<f64> = z0_hat.iter().zip(eps).map(|(x, e)| sa * x + sd * e).collect();
    if sigma > 0.0 {
        for v in &mut out {
            *v += sigma * rng::normal(rng);
        }
    }
    Ok(out)
}

/// The `sigma_t` that scales semantic guidance at step `t`.
pub fn guidance_sigma(
    cfg: &RefineConfig,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
) -> Result<f64> {
    match cfg.guidance_sigma {
        GuidanceSigma::Marginal => marginal_sigma(t, grid, schedule),
        GuidanceSigma::Ddim => grid.ddim_sigma(schedule, t, t_prev),
    }
}

/// A DDIM step with classifier-free guidance, plus the semantic guidance
/// correction `-gamma * (z_t - z0) * sigma_t` inside the semantic window.
///
/// `schedule` must carry `cfg.eta`.
#[allow(clippy::too_many_arguments)]
pub fn guided_step<P: NoisePredictor + ?Sized>(
    model: &P,
    z_t: &[f64],
    t: usize,
    t_prev: usize,
    z0: &[f64],
    class: usize,
    cfg: &RefineConfig,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if z0.len() != z_t.len() {
        return Err(Error::DimensionMismatch {
            context: "guided_step z0",
            expected: z_t.len(),
            actual: z0.len(),
        });
    }
    let semantic = cfg.phase(t) == PhaseTag::Semantic;
    let eps = if semantic && cfg.cfg_semantic_off {
        model.predict_eps(z_t, t, Label::Class(class))?
    } else {
        cfg_eps(model, z_t, t, class, cfg.omega)?
    };
    let mut next = ddim_step(&eps, z_t, t, t_prev, schedule, grid, rng)?;
    if semantic && cfg.gamma != 0.0 {
        let sigma = guidance_sigma(cfg, t, t_prev, schedule, grid)?;
        for ((n, z), z0) in next.iter_mut().zip(z_t).zip(z0) {
            *n -= cfg.gamma * (z - z0) * sigma;
        }
    }
    Ok(next)
}

/// Runs the full per-sample procedure and returns the decoded point.
#[allow(clippy::too_many_arguments)]
pub fn refine_point<P: NoisePredictor + ?Sized>(
    x0: &[f64],
    class: usize,
    codec: &Codec,
    model: &P,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    cfg: &RefineConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let (z0, mut z) = inherit(codec, schedule, grid, x0, cfg.t_f, rng)?;
    for t in (1..=cfg.start_step()).rev() {
        z = guided_step(model, &z, t, t - 1, &z0, class, cfg, schedule, grid, rng)?;
    }
    codec.decode(&z)
}

/// Refines every point of `distilled`; labels are carried over unchanged.
///
/// Work is spread over the current rayon pool.
pub fn refine_dataset<P: NoisePredictor + ?Sized>(
    distilled: &LabeledDataset,
    codec: &Codec,
    model: &P,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    cfg: &RefineConfig,
) -> Result<LabeledDataset> {
    cfg.validate(grid.num_steps())?;
    if codec.data_dim() != distilled.dim() {
        return Err(Error::DimensionMismatch {
            context: "codec input vs distilled features",
            expected: codec.data_dim(),
            actual: distilled.dim(),
        });
    }
    if codec.latent_dim() != model.latent_dim() {
        return Err(Error::DimensionMismatch {
            context: "codec latent vs denoiser latent",
            expected: codec.latent_dim(),
            actual: model.latent_dim(),
        });
    }
    if model.num_classes() != distilled.num_classes {
        return Err(Error::DimensionMismatch {
            context: "denoiser classes vs dataset classes",
            expected: model.num_classes(),
            actual: distilled.num_classes,
        });
    }
    let schedule = if schedule.eta() == cfg.eta {
        schedule.clone()
    } else {
        schedule.with_eta(cfg.eta)?
    };
    let rows: Vec<Result<Vec<f64>>> = (0..distilled.len())
        .into_par_iter()
        .map(|i| {
            let mut r = sample_rng(cfg.seed, i);
            let x0 = distilled.features.row(i).to_vec();
            refine_point(&x0, distilled.labels[i], codec, model, &schedule, grid, cfg, &mut r).map_err(|e| {
                Error::Sample {
                    index: i,
                    source: Box::new(e),
                }
            })
        })
        .collect();
    let mut features = Array2::zeros(distilled.features.raw_dim());
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (k, v) in row.into_iter().enumerate() {
            features[[i, k]] = v;
        }
    }
    LabeledDataset::new("synthetic", features, distilled.labels.clone(), distilled.num_classes)
}
