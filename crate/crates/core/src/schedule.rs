//! Noise schedule, sampling grid and the forward (noising) process.
//!
//! Two index spaces appear throughout: *training timesteps* `tau` in `0..=T`
//! (with `alpha_bar[0] = 1`), and *grid steps* `t` in `0..=K` of the sampling
//! grid, where grid step `t` maps to training timestep `train_index(t)` and
//! grid step 0 maps to timestep 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    eta: f64,
    /// `beta[tau - 1]` is the variance added at training timestep `tau`.
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta schedule over `num_train_steps` timesteps.
    ///
    /// `eta` scales the DDIM injection noise. Values above 1 are accepted here;
    /// a step whose injected variance would exceed `1 - alpha_bar(prev)` is
    /// rejected by the sampler.
    pub fn linear(num_train_steps: usize, beta_start: f64, beta_end: f64, eta: f64) -> Result<Self> {
        if num_train_steps == 0 {
            return Err(Error::invalid("num_train_steps must be >= 1"));
        }
        let ok = |b: f64| b.is_finite() && b > 0.0 && b < 1.0;
        if !ok(beta_start) || !ok(beta_end) || beta_start > beta_end {
            return Err(Error::invalid(format!(
                "betas must satisfy 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::invalid(format!("eta must be finite and >= 0, got {eta}")));
        }
        let t = num_train_steps;
        let beta: Vec<f64> = (0..t)
            .map(|i| {
                if t == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t - 1) as f64
                }
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(t + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(NoiseSchedule {
            beta_start,
            beta_end,
            eta,
            beta,
            alpha_bar,
        })
    }

    pub fn num_train_steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        Self::linear(self.num_train_steps(), self.beta_start, self.beta_end, eta)
    }

    /// `alpha_bar` at training timestep `tau`.
    pub fn alpha_bar(&self, tau: usize) -> f64 {
        self.alpha_bar[tau]
    }

    /// `sqrt(1 - alpha_bar(tau))`, the std of the forward marginal.
    pub fn marginal_std(&self, tau: usize) -> f64 {
        (1.0 - self.alpha_bar[tau]).sqrt()
    }

    /// DDIM injection std between training timesteps `tau > tau_prev`:
    /// `eta * sqrt((1 - a_prev)/(1 - a)) * sqrt(1 - a/a_prev)`.
    pub fn ddim_sigma(&self, tau: usize, tau_prev: usize) -> f64 {
        if self.eta == 0.0 {
            return 0.0;
        }
        let a = self.alpha_bar[tau];
        let a_prev = self.alpha_bar[tau_prev];
        self.eta * ((1.0 - a_prev) / (1.0 - a)).sqrt() * (1.0 - a / a_prev).sqrt()
    }
}

/// Uniform-stride subset of training timesteps used at sampling time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepGrid {
    /// `train_indices[k]` for `k` in `0..=K`; entry 0 is timestep 0.
    train_indices: Vec<usize>,
}

impl StepGrid {
    pub fn new(schedule: &NoiseSchedule, num_sample_steps: usize) -> Result<Self> {
        let t = schedule.num_train_steps();
        if num_sample_steps == 0 || num_sample_steps > t {
            return Err(Error::invalid(format!(
                "num_sample_steps must lie in 1..={t}, got {num_sample_steps}"
            )));
        }
        let train_indices = (0..=num_sample_steps).map(|k| k * t / num_sample_steps).collect();
        Ok(StepGrid { train_indices })
    }

    pub fn num_steps(&self) -> usize {
        self.train_indices.len() - 1
    }

    /// Training timestep of grid step `t` (`t = 0` gives 0).
    pub fn train_index(&self, t: usize) -> Result<usize> {
        self.train_indices.get(t).copied().ok_or_else(|| Error::IndexOutOfRange {
            what: "grid step",
            index: t,
            valid: format!("0..={}", self.num_steps()),
        })
    }

    /// The grid steps `1..=K` mapped to training timesteps.
    pub fn train_indices(&self) -> &[usize] {
        &self.train_indices[1..]
    }

    pub fn alpha_bar(&self, schedule: &NoiseSchedule, t: usize) -> Result<f64> {
        Ok(schedule.alpha_bar(self.train_index(t)?))
    }

    pub fn ddim_sigma(&self, schedule: &NoiseSchedule, t: usize, t_prev: usize) -> Result<f64> {
        Ok(schedule.ddim_sigma(self.train_index(t)?, self.train_index(t_prev)?))
    }
}

pub fn make_schedule(num_train_steps: usize, beta_start: f64, beta_end: f64, eta: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(num_train_steps, beta_start, beta_end, eta)
}

pub fn make_grid(schedule: &NoiseSchedule, num_sample_steps: usize) -> Result<StepGrid> {
    StepGrid::new(schedule, num_sample_steps)
}

/// `sqrt(ab) * z0 + sqrt(1 - ab) * eps` with `ab` the `alpha_bar` of grid step `t`.
pub fn forward_noise(
    z0: &[f64],
    t: usize,
    grid: &StepGrid,
    schedule: &NoiseSchedule,
    eps: &[f64],
) -> Result<Vec<f64>> {
    if eps.len() != z0.len() {
        return Err(Error::DimensionMismatch {
            context: "forward_noise eps",
            expected: z0.len(),
            actual: eps.len(),
        });
    }
    let tau = grid.train_index(t)?;
    if tau == 0 {
        return Ok(z0.to_vec());
    }
    let a = schedule.alpha_bar(tau);
    let (signal, noise) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| signal * z + noise * e).collect())
}

/// `sqrt(1 - alpha_bar)` at grid step `t` in `1..=K`.
pub fn marginal_sigma(t: usize, grid: &StepGrid, schedule: &NoiseSchedule) -> Result<f64> {
    if t == 0 || t > grid.num_steps() {
        return Err(Error::IndexOutOfRange {
            what: "grid step",
            index: t,
            valid: format!("1..={}", grid.num_steps()),
        });
    }
    Ok(schedule.marginal_std(grid.train_index(t)?))
}
