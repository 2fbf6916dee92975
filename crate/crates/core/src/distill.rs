//! Stage I: distribution-matching distillation.
//!
//! The distilled points are optimized by gradient descent so that, under
//! freshly sampled random frozen embedders, their per-class embedded means
//! match those of the real data:
//!
//! `L = sum_c || mean_{x in real_c} phi(x) - mean_{x in distilled_c} phi(x) ||^2`
//!
//! averaged over `num_embedders` embedders drawn each iteration. Labels never
//! move. An optional overfitting hook adds a reward from one fixed embedder
//! with a high-frequency first layer, which plants embedder-specific structure
//! in the distilled points.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::rng::{self, streams, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    RandomReal,
    Noise,
    Mix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    /// Random 2-layer tanh networks, resampled every iteration.
    RandomNetwork,
    /// The identity map: plain per-class mean matching.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub ipc: usize,
    pub iterations: usize,
    pub lr: f64,
    pub num_embedders: usize,
    pub embedder: EmbedderKind,
    pub embed_hidden: usize,
    pub embed_dim: usize,
    pub init: InitMode,
    /// Weight of the overfitting hook; 0 turns it off.
    pub hook_strength: f64,
    /// Input scaling of the hook embedder's first layer.
    pub hook_frequency: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            ipc: 10,
            iterations: 500,
            lr: 10.0,
            num_embedders: 4,
            embedder: EmbedderKind::RandomNetwork,
            embed_hidden: 64,
            embed_dim: 32,
            init: InitMode::RandomReal,
            hook_strength: 0.0,
            hook_frequency: 4.0,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ipc == 0 {
            return Err(Error::invalid("ipc must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("distill lr must be > 0, got {}", self.lr)));
        }
        if self.num_embedders == 0 || self.embed_hidden == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("num_embedders, embed_hidden and embed_dim must be >= 1"));
        }
        if !(self.hook_strength.is_finite() && self.hook_strength >= 0.0) || !self.hook_frequency.is_finite() {
            return Err(Error::invalid("hook_strength must be >= 0 and hook_frequency finite"));
        }
        Ok(())
    }
}

/// A frozen feature map used to compare class distributions.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedder {
    Identity,
    Network(Mlp),
}

impl Embedder {
    /// A 2-layer tanh network `dim -> hidden -> out` with fresh random weights.
    pub fn sample(dim: usize, hidden: usize, out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Embedder::Network(Mlp::new(&[dim, hidden, out], Activation::Tanh, rng)?))
    }

    pub fn embed(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Embedder::Identity => x.to_owned(),
            Embedder::Network(m) => m.forward(x),
        }
    }

    /// Embeds `x` and returns the vector-Jacobian product with `d_out`
    /// computed by `d_out_of(embedded)`.
    fn embed_and_pullback(
        &self,
        x: ArrayView2<f64>,
        d_out_of: impl FnOnce(&Array2<f64>) -> Array2<f64>,
    ) -> Array2<f64> {
        match self {
            Embedder::Identity => d_out_of(&x.to_owned()),
            Embedder::Network(m) => {
                let trace = m.forward_traced(x);
                let d_out = d_out_of(trace.output());
                m.backward(&trace, d_out.view()).1
            }
        }
    }
}

fn check_compatible(real: &LabeledDataset, distilled: &LabeledDataset) -> Result<()> {
    if real.num_classes != distilled.num_classes {
        return Err(Error::DimensionMismatch {
            context: "class count of real vs distilled",
            expected: real.num_classes,
            actual: distilled.num_classes,
        });
    }
    if real.dim() != distilled.dim() {
        return Err(Error::DimensionMismatch {
            context: "feature dim of real vs distilled",
            expected: real.dim(),
            actual: distilled.dim(),
        });
    }
    Ok(())
}

/// Per-class means of `embedded` rows (`C x e`).
pub fn class_means(embedded: &Array2<f64>, ds: &LabeledDataset) -> Result<Array2<f64>> {
    let mut sums = Array2::zeros((ds.num_classes, embedded.ncols()));
    let counts = ds.class_counts();
    for (i, &l) in ds.labels.iter().enumerate() {
        let mut row = sums.row_mut(l);
        row += &embedded.row(i);
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::EmptyClass {
                class: c,
                dataset: ds.name.clone(),
            });
        }
        sums.row_mut(c).mapv_inplace(|v| v / n as f64);
    }
    Ok(sums)
}

pub fn dm_loss(real: &LabeledDataset, distilled: &LabeledDataset, embedder: &Embedder) -> Result<f64> {
    check_compatible(real, distilled)?;
    let target = class_means(&embedder.embed(real.features.view()), real)?;
    let means = class_means(&embedder.embed(distilled.features.view()), distilled)?;
    Ok((means - target).mapv(|v| v * v).sum())
}

/// DM loss against precomputed real class means, with its gradient w.r.t.
/// the distilled features.
pub fn dm_loss_and_grad(
    real_means: &Array2<f64>,
    distilled: &LabeledDataset,
    embedder: &Embedder,
) -> Result<(f64, Array2<f64>)> {
    let counts = distilled.class_counts();
    let mut loss = 0.0;
    let mut err = Ok(());
    let grad = embedder.embed_and_pullback(distilled.features.view(), |emb| {
        let means = match class_means(emb, distilled) {
            Ok(m) => m,
            Err(e) => {
                err = Err(e);
                return Array2::zeros(emb.raw_dim());
            }
        };
        let diff = means - real_means;
        loss = diff.mapv(|v| v * v).sum();
        let mut d = Array2::zeros(emb.raw_dim());
        for (i, &l) in distilled.labels.iter().enumerate() {
            let scale = 2.0 / counts[l] as f64;
            d.row_mut(i).assign(&(&diff.row(l) * scale));
        }
        d
    });
    err?;
    Ok((loss, grad))
}

/// Mean DM loss over a fixed list of embedders.
pub fn ensemble_dm_loss(real: &LabeledDataset, distilled: &LabeledDataset, embedders: &[Embedder]) -> Result<f64> {
    let mut total = 0.0;
    for e in embedders {
        total += dm_loss(real, distilled, e)?;
    }
    Ok(total / embedders.len() as f64)
}

/// A frozen embedder set drawn from `(seed, eval stream)`, for comparing
/// distilled sets on equal footing.
pub fn evaluation_embedders(dim: usize, cfg: &DistillConfig, count: usize, seed: u64) -> Result<Vec<Embedder>> {
    let mut r = rng::stream(seed, streams::DISTILL_EVAL);
    (0..count)
        .map(|_| match cfg.embedder {
            EmbedderKind::Identity => Ok(Embedder::Identity),
            EmbedderKind::RandomNetwork => Embedder::sample(dim, cfg.embed_hidden, cfg.embed_dim, &mut r),
        })
        .collect()
}

/// The fixed high-frequency embedder and per-class reward directions of the
/// overfitting hook.
#[derive(Debug, Clone)]
pub struct OverfitHook {
    net: Mlp,
    codes: Array2<f64>,
    strength: f64,
}

impl OverfitHook {
    pub fn new(dim: usize, num_classes: usize, cfg: &DistillConfig) -> Result<Self> {
        let mut r = rng::stream(cfg.seed, streams::DISTILL_HOOK);
        let mut net = Mlp::new(&[dim, cfg.embed_hidden, cfg.embed_dim], Activation::Tanh, &mut r)?;
        let mut layers = net.layers().to_vec();
        layers[0].weight *= cfg.hook_frequency;
        layers[0].bias = layers[0].bias.mapv(|_| rng::uniform(&mut r) * 2.0 * std::f64::consts::PI - std::f64::consts::PI);
        net = Mlp::from_layers(layers, Activation::Tanh)?;
        let scale = 1.0 / (cfg.embed_dim as f64).sqrt();
        let codes = Array2::from_shape_fn((num_classes, cfg.embed_dim), |_| scale * rng::normal(&mut r));
        Ok(OverfitHook {
            net,
            codes,
            strength: cfg.hook_strength,
        })
    }

    /// `-strength / n * sum_i <psi(x_i), code[y_i]>` and its gradient.
    pub fn loss_and_grad(&self, ds: &LabeledDataset) -> (f64, Array2<f64>) {
        let n = ds.len() as f64;
        let trace = self.net.forward_traced(ds.features.view());
        let out = trace.output();
        let mut loss = 0.0;
        let mut d_out = Array2::zeros(out.raw_dim());
        for (i, &l) in ds.labels.iter().enumerate() {
            let code = self.codes.row(l);
            loss -= out.row(i).dot(&code);
            d_out.row_mut(i).assign(&(&code * (-self.strength / n)));
        }
        let (_, d_x) = self.net.backward(&trace, d_out.view());
        (self.strength * loss / n, d_x)
    }
}

/// Initial distilled set: `ipc` points per class, labels class-major.
///
/// * `random-real`: rows drawn without replacement from each class.
/// * `noise`: per-dimension data mean plus `N(0, 1)` scaled by the data std.
/// * `mix`: each point averages 4 random points of its class (distinct when
///   the class has at least 4).
pub fn init_distilled(real: &LabeledDataset, cfg: &DistillConfig) -> Result<LabeledDataset> {
    if cfg.ipc == 0 {
        return Err(Error::invalid("ipc must be >= 1"));
    }
    let classes = real.class_indices();
    for (c, rows) in classes.iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::EmptyClass {
                class: c,
                dataset: real.name.clone(),
            });
        }
    }
    let mut r = rng::stream(cfg.seed, streams::DISTILL_INIT);
    let d = real.dim();
    let n = cfg.ipc * real.num_classes;
    let mut features = Array2::zeros((n, d));
    let labels: Vec<usize> = (0..real.num_classes).flat_map(|c| std::iter::repeat_n(c, cfg.ipc)).collect();
    match cfg.init {
        InitMode::RandomReal => {
            for (c, rows) in classes.iter().enumerate() {
                if rows.len() < cfg.ipc {
                    return Err(Error::InsufficientPoints {
                        class: c,
                        needed: cfg.ipc,
                        available: rows.len(),
                    });
                }
                let mut rows = rows.clone();
                rng::shuffle(&mut r, &mut rows);
                for (j, &src) in rows[..cfg.ipc].iter().enumerate() {
                    features.row_mut(c * cfg.ipc + j).assign(&real.features.row(src));
                }
            }
        }
        InitMode::Noise => {
            let mean = real.features.mean_axis(Axis(0)).expect("nonempty");
            let std = real.features.std_axis(Axis(0), 0.0);
            for i in 0..n {
                for k in 0..d {
                    features[[i, k]] = mean[k] + std[k] * rng::normal(&mut r);
                }
            }
        }
        InitMode::Mix => {
            for (c, rows) in classes.iter().enumerate() {
                for j in 0..cfg.ipc {
                    let picks: Vec<usize> = if rows.len() >= 4 {
                        let mut pool = rows.clone();
                        // Partial Fisher-Yates: the first four slots become a random sample.
                        for s in 0..4 {
                            let k = s + rng::below(&mut r, pool.len() - s);
                            pool.swap(s, k);
                        }
                        pool[..4].to_vec()
                    } else {
                        (0..4).map(|_| rows[rng::below(&mut r, rows.len())]).collect()
                    };
                    let mut row = features.row_mut(c * cfg.ipc + j);
                    for &p in &picks {
                        row += &real.features.row(p);
                    }
                    row.mapv_inplace(|v| v / 4.0);
                }
            }
        }
    }
    LabeledDataset::new("distilled", features, labels, real.num_classes)
}

/// Seeded stratified random subset, the "random coreset" baseline.
pub fn random_coreset(real: &LabeledDataset, ipc: usize, seed: u64) -> Result<LabeledDataset> {
    let cfg = DistillConfig {
        ipc,
        init: InitMode::RandomReal,
        seed,
        ..DistillConfig::default()
    };
    Ok(init_distilled(real, &cfg)?.with_name("coreset"))
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub distilled: LabeledDataset,
    /// Mean DM loss over the iteration's embedders, before each update.
    pub dm_trace: Vec<f64>,
    /// Hook term before each update (all zero when the hook is off).
    pub hook_trace: Vec<f64>,
}

pub fn distill(real: &LabeledDataset, cfg: &DistillConfig) -> Result<DistillOutcome> {
    cfg.validate()?;
    let mut distilled = init_distilled(real, cfg)?;
    let hook = if cfg.hook_strength > 0.0 {
        Some(OverfitHook::new(real.dim(), real.num_classes, cfg)?)
    } else {
        None
    };
    let mut r = rng::stream(cfg.seed, streams::DISTILL_EMBEDDERS);
    let mut dm_trace = Vec::with_capacity(cfg.iterations);
    let mut hook_trace = Vec::with_capacity(cfg.iterations);
    let identity_target = match cfg.embedder {
        EmbedderKind::Identity => Some(class_means(&real.features, real)?),
        EmbedderKind::RandomNetwork => None,
    };
    for it in 0..cfg.iterations {
        let embedders: Vec<Embedder> = (0..cfg.num_embedders)
            .map(|_| match cfg.embedder {
                EmbedderKind::Identity => Ok(Embedder::Identity),
                EmbedderKind::RandomNetwork => Embedder::sample(real.dim(), cfg.embed_hidden, cfg.embed_dim, &mut r),
            })
            .collect::<Result<_>>()?;
        let parts: Vec<Result<(f64, Array2<f64>)>> = embedders
            .par_iter()
            .map(|e| {
                let target = match &identity_target {
                    Some(t) => t.clone(),
                    None => class_means(&e.embed(real.features.view()), real)?,
                };
                dm_loss_and_grad(&target, &distilled, e)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = Array2::zeros(distilled.features.raw_dim());
        for p in parts {
            let (l, g) = p?;
            loss += l;
            grad += &g;
        }
        let k = cfg.num_embedders as f64;
        loss /= k;
        grad /= k;
        let mut hook_loss = 0.0;
        if let Some(h) = &hook {
            let (l, g) = h.loss_and_grad(&distilled);
            hook_loss = l;
            grad += &g;
        }
        if !loss.is_finite() || !hook_loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { stage: "distill", epoch: it });
        }
        dm_trace.push(loss);
        hook_trace.push(hook_loss);
        distilled.features.scaled_add(-cfg.lr, &grad);
    }
    if distilled.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            stage: "distill",
            epoch: cfg.iterations,
        });
    }
    Ok(DistillOutcome {
        distilled,
        dm_trace,
        hook_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, DataSpec};
    use crate::nn::check;

    fn ring(ppc: usize, seed: u64) -> LabeledDataset {
        generate(&DataSpec {
            num_classes: 4,
            points_per_class: ppc,
            seed,
            ..DataSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn identical_sets_have_zero_loss() {
        let real = ring(20, 1);
        let e = Embedder::sample(2, 8, 4, &mut rng::stream(1, 0)).unwrap();
        assert_eq!(dm_loss(&real, &real, &e).unwrap(), 0.0);
    }

    #[test]
    fn identity_embedder_arithmetic() {
        let real = LabeledDataset::new("r", Array2::from_shape_vec((2, 2), vec![0.0, 2.0, 2.0, 0.0]).unwrap(), vec![0, 0], 1)
            .unwrap();
        let distilled = LabeledDataset::new("d", Array2::zeros((1, 2)), vec![0], 1).unwrap();
        assert_eq!(dm_loss(&real, &distilled, &Embedder::Identity).unwrap(), 2.0);
    }

    #[test]
    fn missing_class_is_an_error() {
        let real = ring(5, 1);
        let partial = real.subset(&[0, 1, 5, 6, 10, 11], "partial");
        assert!(matches!(
            dm_loss(&real, &partial, &Embedder::Identity),
            Err(Error::EmptyClass { class: 3, .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            let real = ring(6, seed);
            let cfg = DistillConfig {
                ipc: 3,
                init: InitMode::Noise,
                seed,
                ..DistillConfig::default()
            };
            let distilled = init_distilled(&real, &cfg).unwrap();
            let e = Embedder::sample(2, 7, 5, &mut rng::stream(seed, 1)).unwrap();
            let target = class_means(&e.embed(real.features.view()), &real).unwrap();
            let (_, grad) = dm_loss_and_grad(&target, &distilled, &e).unwrap();
            let flat: Vec<f64> = distilled.features.iter().copied().collect();
            let numeric = check::central_difference(&flat, 1e-6, |p| {
                let mut probe = distilled.clone();
                probe.features = Array2::from_shape_vec(distilled.features.raw_dim(), p.to_vec()).unwrap();
                dm_loss(&real, &probe, &e).unwrap()
            });
            let err = check::relative_error(&grad.iter().copied().collect::<Vec<_>>(), &numeric);
            assert!(err < 1e-5, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn hook_gradient_matches_finite_differences() {
        let real = ring(6, 3);
        let cfg = DistillConfig {
            ipc: 2,
            hook_strength: 0.7,
            ..DistillConfig::default()
        };
        let distilled = init_distilled(&real, &cfg).unwrap();
        let hook = OverfitHook::new(2, 4, &cfg).unwrap();
        let (_, grad) = hook.loss_and_grad(&distilled);
        let flat: Vec<f64> = distilled.features.iter().copied().collect();
        let numeric = check::central_difference(&flat, 1e-6, |p| {
            let mut probe = distilled.clone();
            probe.features = Array2::from_shape_vec(distilled.features.raw_dim(), p.to_vec()).unwrap();
            hook.loss_and_grad(&probe).0
        });
        let err = check::relative_error(&grad.iter().copied().collect::<Vec<_>>(), &numeric);
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn zero_iterations_is_a_seeded_coreset() {
        let real = ring(30, 2);
        let cfg = DistillConfig {
            ipc: 5,
            iterations: 0,
            seed: 9,
            ..DistillConfig::default()
        };
        let out = distill(&real, &cfg).unwrap();
        assert!(out.dm_trace.is_empty());
        assert_eq!(out.distilled.features, random_coreset(&real, 5, 9).unwrap().features);
        assert_eq!(out.distilled.class_counts(), vec![5; 4]);
    }

    #[test]
    fn random_real_rows_come_from_the_real_set() {
        let real = ring(30, 4);
        let ds = random_coreset(&real, 7, 3).unwrap();
        for i in 0..ds.len() {
            let found = (0..real.len()).any(|j| real.labels[j] == ds.labels[i] && real.features.row(j) == ds.features.row(i));
            assert!(found, "row {i} not in real set");
        }
        // Without replacement: no duplicates.
        for i in 0..ds.len() {
            for j in i + 1..ds.len() {
                assert_ne!(ds.features.row(i), ds.features.row(j));
            }
        }
    }

    #[test]
    fn random_real_needs_enough_points() {
        let real = ring(3, 4);
        assert!(matches!(
            random_coreset(&real, 4, 0),
            Err(Error::InsufficientPoints { needed: 4, available: 3, .. })
        ));
    }

    #[test]
    fn mix_of_identical_points_is_that_point() {
        let x = Array2::from_shape_vec((4, 2), vec![1.5, -2.0, 1.5, -2.0, 1.5, -2.0, 1.5, -2.0]).unwrap();
        let real = LabeledDataset::new("same", x, vec![0; 4], 1).unwrap();
        let cfg = DistillConfig {
            ipc: 3,
            init: InitMode::Mix,
            ..DistillConfig::default()
        };
        let ds = init_distilled(&real, &cfg).unwrap();
        for i in 0..3 {
            assert_eq!(ds.features.row(i).to_vec(), vec![1.5, -2.0]);
        }
    }

    #[test]
    fn noise_init_matches_data_spread() {
        let real = ring(200, 5);
        let cfg = DistillConfig {
            ipc: 2500,
            init: InitMode::Noise,
            ..DistillConfig::default()
        };
        let ds = init_distilled(&real, &cfg).unwrap();
        let data_std = real.features.std_axis(Axis(0), 0.0);
        let got = ds.features.std_axis(Axis(0), 1.0);
        for k in 0..2 {
            assert!((got[k] / data_std[k] - 1.0).abs() < 0.1, "dim {k}: {} vs {}", got[k], data_std[k]);
        }
    }

    #[test]
    fn identity_embedder_drives_class_means_together() {
        let real = ring(50, 6);
        let cfg = DistillConfig {
            ipc: 10,
            iterations: 200,
            lr: 1.0,
            num_embedders: 1,
            embedder: EmbedderKind::Identity,
            ..DistillConfig::default()
        };
        let out = distill(&real, &cfg).unwrap();
        let target = class_means(&real.features, &real).unwrap();
        let got = class_means(&out.distilled.features, &out.distilled).unwrap();
        let worst = (&got - &target).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-3, "max mean gap {worst}");
        assert_eq!(out.distilled.labels, random_coreset(&real, 10, 0).unwrap().labels);
    }

    #[test]
    fn noise_init_run_is_finite() {
        let real = ring(40, 7);
        let cfg = DistillConfig {
            ipc: 4,
            iterations: 30,
            init: InitMode::Noise,
            ..DistillConfig::default()
        };
        let out = distill(&real, &cfg).unwrap();
        assert!(out.distilled.features.iter().all(|v| v.is_finite()));
    }
}
