//! Hard-label evaluation with a zoo of small classifiers.
//!
//! Every candidate dataset is used to train fresh classifiers of several
//! architectures from scratch (softmax cross-entropy, full-batch gradient
//! descent), which are then scored on a held-out real test split. One
//! architecture, the prior, matches the embedders used during distillation;
//! the rest are unseen and their mean accuracy is the cross-architecture
//! score.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpGrad};
use crate::rng::{self, streams, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureMap {
    None,
    /// Fixed random Fourier features `sqrt(2/D) cos(x W / bandwidth + b)`.
    Rff { features: usize, bandwidth: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub feature_map: FeatureMap,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Counts toward the cross-architecture mean.
    pub unseen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub trials: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Step size of the random-feature linear model, whose features are
    /// an order of magnitude smaller than raw coordinates.
    pub rff_lr: f64,
    pub rff_features: usize,
    pub rff_bandwidth: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            trials: 5,
            epochs: 500,
            lr: 0.1,
            rff_lr: 2.0,
            rff_features: 128,
            rff_bandwidth: 1.0,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.rff_lr > 0.0 && self.rff_lr.is_finite()) {
            return Err(Error::invalid("evaluation learning rates must be positive"));
        }
        if self.rff_features == 0 || !(self.rff_bandwidth > 0.0 && self.rff_bandwidth.is_finite()) {
            return Err(Error::invalid("rff_features must be >= 1 and rff_bandwidth > 0"));
        }
        Ok(())
    }
}

/// Name of the architecture matching the distillation embedders.
pub const PRIOR_ARCH: &str = "tanh-64";

/// The prior architecture followed by four unseen ones.
pub fn default_zoo(cfg: &EvalConfig) -> Vec<ArchSpec> {
    let mlp = |name: &str, widths: &[usize], act: Activation, idx: u64, unseen: bool| ArchSpec {
        name: name.to_string(),
        hidden_widths: widths.to_vec(),
        activation: act,
        feature_map: FeatureMap::None,
        epochs: cfg.epochs,
        lr: cfg.lr,
        seed: rng::mix(cfg.seed, idx),
        unseen,
    };
    vec![
        mlp(PRIOR_ARCH, &[64], Activation::Tanh, 0, false),
        mlp("relu-16x3", &[16, 16, 16], Activation::Relu, 1, true),
        mlp("tanh-128", &[128], Activation::Tanh, 2, true),
        ArchSpec {
            name: "rff-linear".to_string(),
            hidden_widths: Vec::new(),
            activation: Activation::Identity,
            feature_map: FeatureMap::Rff {
                features: cfg.rff_features,
                bandwidth: cfg.rff_bandwidth,
            },
            epochs: cfg.epochs,
            lr: cfg.rff_lr,
            seed: rng::mix(cfg.seed, 3),
            unseen: true,
        },
        mlp("relu-32x2", &[32, 32], Activation::Relu, 4, true),
    ]
}

#[derive(Debug, Clone, PartialEq)]
struct Rff {
    weight: Array2<f64>,
    phase: Array1<f64>,
}

impl Rff {
    fn sample(dim: usize, features: usize, bandwidth: f64, rng: &mut Rng) -> Self {
        let weight = Array2::from_shape_fn((dim, features), |_| rng::normal(rng) / bandwidth);
        let phase = Array1::from_shape_fn(features, |_| 2.0 * PI * rng::uniform(rng));
        Rff { weight, phase }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let scale = (2.0 / self.phase.len() as f64).sqrt();
        let mut z = x.dot(&self.weight) + &self.phase;
        z.mapv_inplace(|v| scale * v.cos());
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    features: Option<Rff>,
    net: Mlp,
}

impl Classifier {
    /// Randomly initialized classifier for `dim`-dimensional inputs.
    pub fn init(arch: &ArchSpec, dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 || num_classes == 0 {
            return Err(Error::invalid("classifier needs dim >= 1 and num_classes >= 1"));
        }
        let mut r = rng::stream(arch.seed, streams::EVALUATE);
        let (features, input) = match arch.feature_map {
            FeatureMap::None => (None, dim),
            FeatureMap::Rff { features, bandwidth } => {
                if features == 0 || !(bandwidth > 0.0) {
                    return Err(Error::invalid("rff needs features >= 1 and bandwidth > 0"));
                }
                (Some(Rff::sample(dim, features, bandwidth, &mut r)), features)
            }
        };
        let mut sizes = vec![input];
        sizes.extend(&arch.hidden_widths);
        sizes.push(num_classes);
        let net = Mlp::new(&sizes, arch.activation, &mut r)?;
        Ok(Classifier { features, net })
    }

    pub fn num_classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn inputs(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match &self.features {
            Some(f) => f.apply(x),
            None => x.to_owned(),
        }
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.net.forward(self.inputs(x).view())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.logits(x)
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn accuracy(&self, ds: &LabeledDataset) -> f64 {
        let pred = self.predict(ds.features.view());
        let hits = pred.iter().zip(&ds.labels).filter(|(p, y)| p == y).count();
        hits as f64 / ds.len() as f64
    }

    /// Mean softmax cross-entropy and its gradient with respect to the
    /// network parameters.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, labels: &[usize]) -> (f64, MlpGrad) {
        let inputs = self.inputs(x);
        let trace = self.net.forward_traced(inputs.view());
        let logits = trace.output();
        let n = labels.len() as f64;
        let mut d = Array2::zeros(logits.raw_dim());
        let mut loss = 0.0;
        for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let log_z = m + sum.ln();
            loss += log_z - row[labels[i]];
            for (k, &v) in row.iter().enumerate() {
                d[[i, k]] = (v - log_z).exp() / n;
            }
            d[[i, labels[i]]] -= 1.0 / n;
        }
        let (grad, _) = self.net.backward(&trace, d.view());
        (loss / n, grad)
    }

    pub fn loss(&self, x: ArrayView2<f64>, labels: &[usize]) -> f64 {
        self.loss_and_grad(x, labels).0
    }
}

/// Trains a classifier on `train` by full-batch gradient descent.
pub fn train_classifier(train: &LabeledDataset, arch: &ArchSpec) -> Result<Classifier> {
    if train.is_empty() {
        return Err(Error::invalid("classifier training set is empty"));
    }
    if !(arch.lr > 0.0 && arch.lr.is_finite()) {
        return Err(Error::invalid(format!("{}: lr must be positive", arch.name)));
    }
    let mut clf = Classifier::init(arch, train.dim(), train.num_classes)?;
    let x = train.features.view();
    for epoch in 0..arch.epochs {
        let (loss, grad) = clf.loss_and_grad(x, &train.labels);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                stage: "classifier",
                epoch,
            });
        }
        clf.net.apply_gradient(&grad, arch.lr);
    }
    if !clf.net.all_finite() {
        return Err(Error::Divergence {
            stage: "classifier",
            epoch: arch.epochs,
        });
    }
    Ok(clf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchResult {
    pub arch: String,
    pub unseen: bool,
    pub accuracies: Vec<f64>,
}

impl ArchResult {
    pub fn mean(&self) -> f64 {
        mean(&self.accuracies)
    }

    /// Sample standard deviation; zero for a single trial.
    pub fn std(&self) -> f64 {
        std(&self.accuracies)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEval {
    pub dataset: String,
    pub archs: Vec<ArchResult>,
    /// Mean distance from each candidate point to its nearest neighbour.
    pub nn_spread: f64,
}

impl DatasetEval {
    pub fn cross_arch_mean(&self) -> f64 {
        let unseen: Vec<f64> = self.archs.iter().filter(|a| a.unseen).map(ArchResult::mean).collect();
        mean(&unseen)
    }

    pub fn arch(&self, name: &str) -> Option<&ArchResult> {
        self.archs.iter().find(|a| a.arch == name)
    }

    /// Mean accuracy of the first architecture not counted as unseen.
    pub fn prior_mean(&self) -> Option<f64> {
        self.archs.iter().find(|a| !a.unseen).map(ArchResult::mean)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub trials: usize,
    pub rows: Vec<DatasetEval>,
}

impl EvalReport {
    pub fn get(&self, dataset: &str) -> Option<&DatasetEval> {
        self.rows.iter().find(|r| r.dataset == dataset)
    }

    /// Appends the rows of `other`, which must use the same trial count.
    pub fn extend(&mut self, other: EvalReport) -> Result<()> {
        if self.rows.is_empty() {
            self.trials = other.trials;
        } else if other.trials != self.trials {
            return Err(Error::invalid(format!(
                "cannot merge reports with {} and {} trials",
                self.trials, other.trials
            )));
        }
        self.rows.extend(other.rows);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,arch,trial,accuracy\n");
        for row in &self.rows {
            for a in &row.archs {
                for (t, acc) in a.accuracies.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{}", row.dataset, a.arch, t, acc);
                }
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.rows.first() else {
            return out;
        };
        let _ = write!(out, "{:<16}", "dataset");
        for a in &first.archs {
            let name = if a.unseen { a.arch.clone() } else { format!("{}*", a.arch) };
            let _ = write!(out, " {:>15}", name);
        }
        let _ = writeln!(out, " {:>10} {:>10}", "cross_arch", "nn_spread");
        for row in &self.rows {
            let _ = write!(out, "{:<16}", row.dataset);
            for a in &row.archs {
                let _ = write!(out, " {:>15}", format!("{:.4}±{:.4}", a.mean(), a.std()));
            }
            let _ = writeln!(out, " {:>10.4} {:>10.4}", row.cross_arch_mean(), row.nn_spread);
        }
        let _ = writeln!(out, "trials per cell: {}; * marks the prior architecture", self.trials);
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.summary()).map_err(|e| Error::io(path, e))
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean Euclidean distance from every point to its nearest other point.
pub fn nn_spread(ds: &LabeledDataset) -> f64 {
    let n = ds.len();
    if n < 2 {
        return 0.0;
    }
    let x = &ds.features;
    let total: f64 = (0..n)
        .map(|i| {
            let mut best = f64::INFINITY;
            for j in 0..n {
                if i != j {
                    let d: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                    best = best.min(d);
                }
            }
            best.sqrt()
        })
        .sum();
    total / n as f64
}

/// Seed of trial `trial` of architecture `arch`.
pub fn trial_seed(arch: &ArchSpec, trial: usize) -> u64 {
    rng::mix(arch.seed, trial as u64)
}

/// Trains `trials` classifiers per architecture on `candidate` and scores
/// them on `test`.
pub fn evaluate_dataset(
    candidate: &LabeledDataset,
    test: &LabeledDataset,
    archs: &[ArchSpec],
    trials: usize,
) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if archs.is_empty() {
        return Err(Error::invalid("no architectures to evaluate"));
    }
    if candidate.num_classes != test.num_classes {
        return Err(Error::DimensionMismatch {
            context: "candidate vs test classes",
            expected: test.num_classes,
            actual: candidate.num_classes,
        });
    }
    if candidate.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            context: "candidate vs test dimension",
            expected: test.dim(),
            actual: candidate.dim(),
        });
    }
    let jobs: Vec<(usize, usize)> = (0..archs.len()).flat_map(|a| (0..trials).map(move |t| (a, t))).collect();
    let accs: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(a, t)| {
            let arch = ArchSpec {
                seed: trial_seed(&archs[a], t),
                ..archs[a].clone()
            };
            train_classifier(candidate, &arch)
                .map(|clf| clf.accuracy(test))
                .map_err(|e| Error::Trial {
                    arch: arch.name.clone(),
                    trial: t,
                    source: Box::new(e),
                })
        })
        .collect();
    let mut accs = accs.into_iter();
    let mut results = Vec::with_capacity(archs.len());
    for arch in archs {
        let mut accuracies = Vec::with_capacity(trials);
        for _ in 0..trials {
            accuracies.push(accs.next().expect("one result per job")?);
        }
        results.push(ArchResult {
            arch: arch.name.clone(),
            unseen: arch.unseen,
            accuracies,
        });
    }
    Ok(EvalReport {
        trials,
        rows: vec![DatasetEval {
            dataset: candidate.name.clone(),
            archs: results,
            nn_spread: nn_spread(candidate),
        }],
    })
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Scatter plot of the first two feature dimensions, one colour per class.
pub fn scatter_svg(ds: &LabeledDataset) -> String {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 40.0;
    let bounds = |k: usize| {
        let col = ds.features.column(k.min(ds.dim() - 1));
        let lo = col.fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let pad = if hi > lo { 0.1 * (hi - lo) } else { 1.0 };
        (lo - pad, hi + pad)
    };
    let (x0, x1) = bounds(0);
    let (y0, y1) = bounds(1);
    let span = SIZE - 2.0 * MARGIN;
    let sx = |v: f64| MARGIN + (v - x0) / (x1 - x0) * span;
    let sy = |v: f64| SIZE - MARGIN - (v - y0) / (y1 - y0) * span;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-size="11">{:.3}</text>"#,
        SIZE - MARGIN + 14.0,
        x0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{:.3}</text>"#,
        SIZE - MARGIN,
        SIZE - MARGIN + 14.0,
        x1
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{:.3}</text>"#,
        MARGIN - 4.0,
        SIZE - MARGIN,
        y0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{:.3}</text>"#,
        MARGIN - 4.0,
        MARGIN + 10.0,
        y1
    );
    let _ = writeln!(out, r#"<text x="{}" y="24" font-size="13" text-anchor="middle">{}</text>"#, SIZE / 2.0, ds.name);
    let ycol = 1.min(ds.dim() - 1);
    for (i, &label) in ds.labels.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
            sx(ds.features[[i, 0]]),
            sy(ds.features[[i, ycol]]),
            PALETTE[label % PALETTE.len()]
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_scatter(ds: &LabeledDataset, path: &Path) -> Result<()> {
    std::fs::write(path, scatter_svg(ds)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, DataSpec};
    use crate::nn::check;

    fn toy(n_per: usize, noise: f64, seed: u64) -> LabeledDataset {
        let mut r = rng::stream(seed, 99);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in 0..2 {
            let m = if c == 0 { 4.0 } else { -4.0 };
            for _ in 0..n_per {
                x.push(m + noise * rng::normal(&mut r));
                x.push(noise * rng::normal(&mut r));
                y.push(c);
            }
        }
        LabeledDataset::new("toy", Array2::from_shape_vec((2 * n_per, 2), x).unwrap(), y, 2).unwrap()
    }

    fn arch(name: &str, cfg: &EvalConfig) -> ArchSpec {
        default_zoo(cfg).into_iter().find(|a| a.name == name).unwrap()
    }

    #[test]
    fn zoo_shape() {
        let zoo = default_zoo(&EvalConfig::default());
        assert_eq!(zoo[0].name, PRIOR_ARCH);
        assert_eq!(zoo[0].hidden_widths, vec![64]);
        assert_eq!(zoo[0].activation, Activation::Tanh);
        assert!(!zoo[0].unseen);
        assert_eq!(zoo.iter().filter(|a| a.unseen).count(), 4);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = EvalConfig::default();
        let ds = toy(5, 1.0, 3);
        for name in ["tanh-64", "relu-16x3", "rff-linear"] {
            let clf = Classifier::init(&arch(name, &cfg), 2, 2).unwrap();
            let (_, grad) = clf.loss_and_grad(ds.features.view(), &ds.labels);
            let p = clf.net.flat_params();
            let fd = check::central_difference(&p, 1e-6, |q| {
                let mut c = clf.clone();
                c.net.set_flat_params(q).unwrap();
                c.loss(ds.features.view(), &ds.labels)
            });
            let err = check::relative_error(&grad.flatten(), &fd);
            assert!(err < 1e-5, "{name}: {err}");
        }
    }

    #[test]
    fn separable_toy_is_learned() {
        let cfg = EvalConfig::default();
        let train = toy(50, 0.1, 1);
        let test = toy(200, 0.1, 2);
        for a in default_zoo(&cfg) {
            let clf = train_classifier(&train, &a).unwrap();
            assert!(clf.accuracy(&test) >= 0.99, "{}", a.name);
        }
    }

    #[test]
    fn single_class_training_predicts_that_class() {
        let cfg = EvalConfig::default();
        let x = Array2::from_shape_fn((10, 2), |(i, k)| (i + k) as f64 * 0.3);
        let train = LabeledDataset::new("one", x.clone(), vec![2; 10], 3).unwrap();
        let clf = train_classifier(&train, &arch("tanh-64", &cfg)).unwrap();
        assert_eq!(clf.accuracy(&train), 1.0);
    }

    #[test]
    fn csv_and_summary_bookkeeping() {
        let cfg = EvalConfig {
            epochs: 20,
            trials: 3,
            ..EvalConfig::default()
        };
        let zoo = default_zoo(&cfg);
        let train = toy(10, 0.5, 1);
        let test = toy(20, 0.5, 2);
        let mut report = evaluate_dataset(&train, &test, &zoo, cfg.trials).unwrap();
        report
            .extend(evaluate_dataset(&train.clone().with_name("again"), &test, &zoo, cfg.trials).unwrap())
            .unwrap();
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * zoo.len() * 3);
        for row in &report.rows {
            for a in &row.archs {
                assert_eq!(a.accuracies.len(), 3);
                assert_eq!(a.mean(), a.accuracies.iter().sum::<f64>() / 3.0);
            }
        }
        assert_eq!(report.rows[0], DatasetEval { dataset: "toy".into(), ..report.rows[1].clone() });
        assert!(report.summary().contains("cross_arch"));
    }

    #[test]
    fn svg_has_one_circle_per_point() {
        let ds = generate(&DataSpec {
            points_per_class: 7,
            ..DataSpec::default()
        })
        .unwrap();
        let svg = scatter_svg(&ds);
        assert_eq!(svg.matches("<circle").count(), ds.len());
        assert_eq!(svg, scatter_svg(&ds));
    }

    #[test]
    fn nn_spread_of_a_grid() {
        let x = Array2::from_shape_fn((4, 2), |(i, k)| if k == 0 { i as f64 * 2.0 } else { 0.0 });
        let ds = LabeledDataset::new("g", x, vec![0, 0, 1, 1], 2).unwrap();
        assert!((nn_spread(&ds) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_candidate_is_rejected() {
        let zoo = default_zoo(&EvalConfig::default());
        let a = toy(3, 0.1, 1);
        let b = LabeledDataset::new("b", Array2::zeros((2, 3)), vec![0, 1], 2).unwrap();
        assert!(evaluate_dataset(&a, &b, &zoo, 1).is_err());
        assert!(evaluate_dataset(&a, &a, &zoo, 0).is_err());
    }
}
