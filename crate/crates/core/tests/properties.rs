use std::path::Path;

use diver_core::codec::Codec;
use diver_core::datagen::{generate, split, DataSpec, Family, LabeledDataset};
use diver_core::denoiser::{cfg_eps, DenoiserArch, EpsilonModel, Label, NoisePredictor};
use diver_core::distill::{distill, DistillConfig};
use diver_core::evaluate::{default_zoo, evaluate_dataset, EvalConfig};
use diver_core::refine::{guided_step, refine_dataset, PhaseTag, RefineConfig};
use diver_core::rng;
use diver_core::schedule::{forward_noise, make_grid, make_schedule, marginal_sigma};
use ndarray::Array2;
use proptest::prelude::*;

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![
        Just(Family::GaussianRing),
        Just(Family::ConcentricRings),
        Just(Family::Spirals)
    ]
}

fn small_model(classes: usize, seed: u64) -> EpsilonModel {
    let arch = DenoiserArch {
        embed_dim: 4,
        hidden_width: 8,
        hidden_layers: 2,
    };
    EpsilonModel::new(2, classes, 50, &arch, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Betas stay small enough that alpha_bar[T] is far above the point where
    // sqrt(1 - alpha_bar) rounds to 1.
    #[test]
    fn schedule_invariants(t in 1usize..300, b0 in 1e-5f64..0.02, extra in 0.0f64..0.03, eta in 0.0f64..1.0) {
        let b1 = b0 + extra;
        let s = make_schedule(t, b0, b1, eta).unwrap();
        let ab = s.alpha_bars();
        prop_assert_eq!(ab[0], 1.0);
        prop_assert!(ab[t] > 0.0);
        for w in ab.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        for tau in 1..=t {
            prop_assert!(s.marginal_std(tau) > s.marginal_std(tau - 1));
            let sigma = s.ddim_sigma(tau, tau - 1);
            let expect = eta * ((1.0 - ab[tau - 1]) / (1.0 - ab[tau])).sqrt() * (1.0 - ab[tau] / ab[tau - 1]).sqrt();
            prop_assert!((sigma - expect).abs() <= 1e-12);
        }
        let det = s.with_eta(0.0).unwrap();
        for tau in 1..=t {
            prop_assert_eq!(det.ddim_sigma(tau, tau - 1), 0.0);
        }
    }

    #[test]
    fn grid_is_uniform_and_ends_at_t(t in 1usize..2000, k_frac in 0.0f64..1.0) {
        let s = make_schedule(t, 1e-4, 0.02, 0.0).unwrap();
        let k = 1 + ((t - 1) as f64 * k_frac) as usize;
        let g = make_grid(&s, k).unwrap();
        let idx = g.train_indices();
        prop_assert_eq!(idx.len(), k);
        prop_assert_eq!(*idx.last().unwrap(), t);
        prop_assert!(idx[0] >= 1);
        for w in idx.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
        prop_assert!(make_grid(&s, t + 1).is_err());
    }

    #[test]
    fn forward_noise_at_zero_is_identity(z in proptest::collection::vec(-10.0f64..10.0, 1..6)) {
        let s = make_schedule(1000, 1e-4, 0.02, 0.0).unwrap();
        let g = make_grid(&s, 50).unwrap();
        let eps = vec![3.0; z.len()];
        prop_assert_eq!(forward_noise(&z, 0, &g, &s, &eps).unwrap(), z);
    }

    #[test]
    fn generation_is_deterministic_and_balanced(fam in family(), c in 1usize..7, ppc in 1usize..30, dim in 2usize..4, seed in any::<u64>()) {
        let spec = DataSpec { family: fam, num_classes: c, points_per_class: ppc, dim, noise_std: 0.3, seed };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
        prop_assert_eq!(a.len(), c * ppc);
        prop_assert!(a.class_counts().iter().all(|&n| n == ppc));
        prop_assert!(a.features.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_noise_gives_class_means(c in 1usize..9, ppc in 1usize..5) {
        let spec = DataSpec { num_classes: c, points_per_class: ppc, noise_std: 0.0, ..DataSpec::default() };
        let ds = generate(&spec).unwrap();
        for i in 0..ds.len() {
            let angle = 2.0 * std::f64::consts::PI * ds.labels[i] as f64 / c as f64;
            prop_assert!((ds.features[[i, 0]] - 4.0 * angle.cos()).abs() < 1e-12);
            prop_assert!((ds.features[[i, 1]] - 4.0 * angle.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn split_partitions_each_class(ppc in 2usize..40, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let ds = generate(&DataSpec { num_classes: 3, points_per_class: ppc, ..DataSpec::default() }).unwrap();
        let (tr, te) = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(tr.len() + te.len(), ds.len());
        let mut all: Vec<Vec<u64>> = tr.features.rows().into_iter().chain(te.features.rows())
            .map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        let mut orig: Vec<Vec<u64>> = ds.features.rows().into_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        all.sort();
        orig.sort();
        prop_assert_eq!(all, orig);
        prop_assert!(tr.class_counts().iter().all(|&n| n >= 1));
        prop_assert!(te.class_counts().iter().all(|&n| n >= 1));
    }

    #[test]
    fn dataset_bytes_round_trip(n in 1usize..20, d in 1usize..5, seed in any::<u64>()) {
        let mut r = rng::stream(seed, 0);
        let x = Array2::from_shape_fn((n, d), |_| rng::normal(&mut r) * 1e3);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let ds = LabeledDataset::new("p", x, labels, 3).unwrap();
        let back = LabeledDataset::from_bytes(Path::new("mem"), &ds.to_bytes()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn cfg_is_affine_in_omega(seed in any::<u64>(), w in -3.0f64..5.0, t in 1usize..=50) {
        let m = small_model(3, seed);
        let z = [0.3, -1.2];
        let c = m.predict_eps(&z, t, Label::Class(1)).unwrap();
        let u = m.predict_eps(&z, t, Label::Null).unwrap();
        let got = cfg_eps(&m, &z, t, 1, w).unwrap();
        for k in 0..2 {
            prop_assert!((got[k] - (u[k] + w * (c[k] - u[k]))).abs() < 1e-12);
        }
        prop_assert_eq!(cfg_eps(&m, &z, t, 1, 1.0).unwrap(), c);
        prop_assert_eq!(cfg_eps(&m, &z, t, 1, 0.0).unwrap(), u);
    }

    #[test]
    fn guidance_identity_and_gating(seed in any::<u64>(), t in 1usize..=50, gamma in 0.0f64..2.0,
                                    z in proptest::collection::vec(-3.0f64..3.0, 2),
                                    z0 in proptest::collection::vec(-3.0f64..3.0, 2)) {
        let s = make_schedule(1000, 1e-4, 0.02, 0.0).unwrap();
        let g = make_grid(&s, 50).unwrap();
        let m = small_model(2, seed);
        let cfg = RefineConfig { gamma, ..RefineConfig::default() };
        let plain = RefineConfig { gamma: 0.0, ..cfg.clone() };
        let a = guided_step(&m, &z, t, t - 1, &z0, 0, &cfg, &s, &g, &mut rng::stream(0, 0)).unwrap();
        let b = guided_step(&m, &z, t, t - 1, &z0, 0, &plain, &s, &g, &mut rng::stream(0, 0)).unwrap();
        if cfg.phase(t) == PhaseTag::Semantic {
            let sigma = marginal_sigma(t, &g, &s).unwrap();
            for k in 0..2 {
                prop_assert!(((a[k] - b[k]) + gamma * (z[k] - z0[k]) * sigma).abs() < 1e-12);
            }
        } else {
            prop_assert_eq!(a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn refine_preserves_labels_and_is_deterministic(seed in any::<u64>(), n in 1usize..12) {
        let s = make_schedule(1000, 1e-4, 0.02, 0.0).unwrap();
        let g = make_grid(&s, 50).unwrap();
        let m = small_model(3, seed);
        let mut r = rng::stream(seed, 1);
        let x = Array2::from_shape_fn((n, 2), |_| rng::normal(&mut r));
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let ds = LabeledDataset::new("d", x, labels, 3).unwrap();
        let cfg = RefineConfig { seed, ..RefineConfig::default() };
        let a = refine_dataset(&ds, &Codec::identity(2), &m, &s, &g, &cfg).unwrap();
        let b = refine_dataset(&ds, &Codec::identity(2), &m, &s, &g, &cfg).unwrap();
        prop_assert_eq!(&a.labels, &ds.labels);
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn distill_keeps_labels_and_size(seed in any::<u64>(), ipc in 1usize..5, hook in 0.0f64..2.0) {
        let real = generate(&DataSpec { num_classes: 4, points_per_class: 30, seed, ..DataSpec::default() }).unwrap();
        let cfg = DistillConfig { ipc, iterations: 5, hook_strength: hook, seed, ..DistillConfig::default() };
        let out = distill(&real, &cfg).unwrap();
        prop_assert_eq!(out.distilled.len(), ipc * 4);
        let expect: Vec<usize> = (0..4).flat_map(|c| std::iter::repeat(c).take(ipc)).collect();
        prop_assert_eq!(&out.distilled.labels, &expect);
        prop_assert!(out.distilled.features.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn accuracies_are_fractions(seed in any::<u64>()) {
        let real = generate(&DataSpec { num_classes: 3, points_per_class: 10, seed, ..DataSpec::default() }).unwrap();
        let cfg = EvalConfig { epochs: 5, trials: 2, seed, ..EvalConfig::default() };
        let report = evaluate_dataset(&real, &real, &default_zoo(&cfg), 2).unwrap();
        for a in &report.rows[0].archs {
            prop_assert_eq!(a.accuracies.len(), 2);
            prop_assert!(a.accuracies.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
