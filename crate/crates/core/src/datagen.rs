//! Seeded synthetic classification datasets, stratified splits, and the
//! dataset file format.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::rng::{self, streams};

/// Radius of the circle carrying the gaussian-ring class means.
pub const RING_RADIUS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = LabeledDataset {
            name: name.into(),
            features,
            labels,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() == 0 || self.features.ncols() == 0 {
            return Err(Error::invalid(format!(
                "dataset {:?} must have n >= 1 and d >= 1, got {}x{}",
                self.name,
                self.features.nrows(),
                self.features.ncols()
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::invalid("num_classes must be >= 1"));
        }
        if self.labels.len() != self.features.nrows() {
            return Err(Error::DimensionMismatch {
                context: "labels vs feature rows",
                expected: self.features.nrows(),
                actual: self.labels.len(),
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::IndexOutOfRange {
                what: "label",
                index: bad,
                valid: format!("0..{}", self.num_classes),
            });
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("dataset {:?} has non-finite features", self.name)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices belonging to each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Self {
        let d = self.dim();
        let mut features = Array2::zeros((indices.len(), d));
        for (r, &i) in indices.iter().enumerate() {
            features.row_mut(r).assign(&self.features.row(i));
        }
        LabeledDataset {
            name: name.into(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Per-dimension population variance, averaged over dimensions.
    pub fn mean_variance(&self) -> f64 {
        let n = self.len() as f64;
        let mut total = 0.0;
        for col in self.features.columns() {
            let mean = col.sum() / n;
            total += col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        }
        total / self.dim() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = DatasetHeader {
            name: self.name.clone(),
            n: self.len(),
            d: self.dim(),
            num_classes: self.num_classes,
            labels: self.labels.clone(),
        };
        let text = serde_json::to_string(&header).expect("dataset header serializes");
        let payload: Vec<f64> = self.features.iter().copied().collect();
        format::encode_framed(&text, &payload)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = format::read_bytes(path)?;
        Self::from_bytes(path, &bytes)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let (text, payload) = format::split_framed(path, bytes)?;
        let header: DatasetHeader = serde_json::from_str(text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("bad dataset header: {e}"),
        })?;
        if header.labels.len() != header.n {
            return Err(Error::ShapeMismatch {
                path: path.to_path_buf(),
                reason: format!("header declares n={} but lists {} labels", header.n, header.labels.len()),
            });
        }
        let expected = header.n * header.d * 8;
        if payload.len() != expected {
            let row_bytes = header.n * 8;
            if row_bytes > 0 && !payload.is_empty() && payload.len() % row_bytes == 0 {
                return Err(Error::ShapeMismatch {
                    path: path.to_path_buf(),
                    reason: format!(
                        "header declares d={} but the payload holds {} columns for n={}",
                        header.d,
                        payload.len() / row_bytes,
                        header.n
                    ),
                });
            }
            return Err(Error::PayloadLength {
                path: path.to_path_buf(),
                expected,
                actual: payload.len(),
            });
        }
        let features = Array2::from_shape_vec((header.n, header.d), format::decode_f64s(payload))
            .expect("payload length checked");
        LabeledDataset::new(header.name, features, header.labels, header.num_classes)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    name: String,
    n: usize,
    d: usize,
    num_classes: usize,
    labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    GaussianRing,
    ConcentricRings,
    Spirals,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-ring" => Ok(Family::GaussianRing),
            "concentric-rings" => Ok(Family::ConcentricRings),
            "spirals" => Ok(Family::Spirals),
            other => Err(Error::invalid(format!(
                "invalid family name {other:?} (expected gaussian-ring, concentric-rings or spirals)"
            ))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::GaussianRing => "gaussian-ring",
            Family::ConcentricRings => "concentric-rings",
            Family::Spirals => "spirals",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub family: Family,
    pub num_classes: usize,
    pub points_per_class: usize,
    pub dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            family: Family::GaussianRing,
            num_classes: 8,
            points_per_class: 500,
            dim: 2,
            noise_std: 0.5,
            seed: 0,
        }
    }
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::invalid("num_classes must be >= 1"));
        }
        if self.points_per_class == 0 {
            return Err(Error::invalid("points_per_class must be >= 1"));
        }
        if self.dim < 2 {
            return Err(Error::invalid(format!("dim must be >= 2, got {}", self.dim)));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid(format!("noise_std must be finite and >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }

    /// Noise-free position of a point of class `class` at curve parameter `s` in `[0, 1)`.
    fn anchor(&self, class: usize, s: f64) -> [f64; 2] {
        let c = class as f64;
        let k = self.num_classes as f64;
        match self.family {
            Family::GaussianRing => {
                let angle = 2.0 * PI * c / k;
                [RING_RADIUS * angle.cos(), RING_RADIUS * angle.sin()]
            }
            Family::ConcentricRings => {
                let radius = 1.5 * (c + 1.0);
                let angle = 2.0 * PI * s;
                [radius * angle.cos(), radius * angle.sin()]
            }
            Family::Spirals => {
                let radius = 0.5 + RING_RADIUS * s;
                let angle = 2.0 * PI * c / k + 1.75 * PI * s;
                [radius * angle.cos(), radius * angle.sin()]
            }
        }
    }
}

/// Draws `points_per_class` points for every class, class-major.
///
/// Dimensions beyond the first two carry pure noise.
pub fn generate(spec: &DataSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, streams::DATAGEN);
    let n = spec.num_classes * spec.points_per_class;
    let mut features = Array2::zeros((n, spec.dim));
    let mut labels = Vec::with_capacity(n);
    for class in 0..spec.num_classes {
        for j in 0..spec.points_per_class {
            let row = class * spec.points_per_class + j;
            let s = match spec.family {
                Family::GaussianRing => 0.0,
                _ => rng::uniform(&mut rng),
            };
            let anchor = spec.anchor(class, s);
            for k in 0..spec.dim {
                let base = if k < 2 { anchor[k] } else { 0.0 };
                features[[row, k]] = base + spec.noise_std * rng::normal(&mut rng);
            }
            labels.push(class);
        }
    }
    let name = format!("{}-c{}-ppc{}", spec.family, spec.num_classes, spec.points_per_class);
    LabeledDataset::new(name, features, labels, spec.num_classes)
}

/// Stratified split: each class is shuffled and `round(fraction * count)`
/// rows (clamped so both sides are nonempty) go to the training side.
pub fn split(ds: &LabeledDataset, train_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train_fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut rng = rng::stream(seed, streams::SPLIT);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, mut rows) in ds.class_indices().into_iter().enumerate() {
        if rows.len() < 2 {
            return Err(Error::InsufficientPoints {
                class,
                needed: 2,
                available: rows.len(),
            });
        }
        rng::shuffle(&mut rng, &mut rows);
        let k = ((train_fraction * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
        train_idx.extend_from_slice(&rows[..k]);
        test_idx.extend_from_slice(&rows[k..]);
    }
    Ok((
        ds.subset(&train_idx, format!("{}-train", ds.name)),
        ds.subset(&test_idx, format!("{}-test", ds.name)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(c: usize, ppc: usize, noise: f64, seed: u64) -> DataSpec {
        DataSpec {
            family: Family::GaussianRing,
            num_classes: c,
            points_per_class: ppc,
            dim: 2,
            noise_std: noise,
            seed,
        }
    }

    #[test]
    fn zero_noise_two_classes_sit_on_the_circle() {
        let ds = generate(&ring(2, 1, 0.0, 7)).unwrap();
        assert_eq!(ds.labels, vec![0, 1]);
        let expect = [[4.0, 0.0], [-4.0, 0.0]];
        for (i, e) in expect.iter().enumerate() {
            for k in 0..2 {
                assert!((ds.features[[i, k]] - e[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_noise_reproduces_class_means_exactly() {
        let spec = ring(8, 3, 0.0, 1);
        let ds = generate(&spec).unwrap();
        for i in 0..ds.len() {
            let a = spec.anchor(ds.labels[i], 0.0);
            assert_eq!(ds.features[[i, 0]], a[0]);
            assert_eq!(ds.features[[i, 1]], a[1]);
        }
    }

    #[test]
    fn generation_is_bit_identical_per_spec() {
        let a = generate(&ring(8, 500, 0.5, 1)).unwrap();
        let b = generate(&ring(8, 500, 0.5, 1)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = generate(&ring(8, 500, 0.5, 2)).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn ring_moments_match_generating_parameters() {
        let spec = ring(8, 1000, 0.5, 3);
        let ds = generate(&spec).unwrap();
        for (class, rows) in ds.class_indices().iter().enumerate() {
            let mean = spec.anchor(class, 0.0);
            for k in 0..2 {
                let vals: Vec<f64> = rows.iter().map(|&r| ds.features[[r, k]]).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64;
                assert!((m - mean[k]).abs() < 0.05, "class {class} dim {k}: mean {m}");
                assert!((var - 0.25).abs() < 0.025, "class {class} dim {k}: var {var}");
            }
        }
    }

    #[test]
    fn every_family_is_balanced_and_finite() {
        for family in [Family::GaussianRing, Family::ConcentricRings, Family::Spirals] {
            let spec = DataSpec {
                family,
                num_classes: 5,
                points_per_class: 40,
                dim: 3,
                noise_std: 0.2,
                seed: 9,
            };
            let ds = generate(&spec).unwrap();
            assert_eq!(ds.class_counts(), vec![40; 5]);
            assert!(ds.features.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!("moons".parse::<Family>().is_err());
        assert!(generate(&ring(4, 0, 0.5, 0)).is_err());
        assert!(generate(&DataSpec { dim: 1, ..ring(4, 2, 0.5, 0) }).is_err());
        assert!(generate(&ring(4, 2, -1.0, 0)).is_err());
    }

    #[test]
    fn split_is_stratified_and_reproducible() {
        let ds = generate(&ring(4, 25, 0.5, 0)).unwrap();
        let (train, test) = split(&ds, 0.8, 11).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        assert_eq!(train.class_counts(), vec![20; 4]);
        assert_eq!(test.class_counts(), vec![5; 4]);
        let (train2, test2) = split(&ds, 0.8, 11).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn split_preserves_the_multiset_of_rows() {
        let ds = generate(&ring(3, 17, 0.5, 4)).unwrap();
        let (train, test) = split(&ds, 0.3, 5).unwrap();
        let key = |d: &LabeledDataset, i: usize| (d.labels[i], d.features[[i, 0]].to_bits(), d.features[[i, 1]].to_bits());
        let mut whole: Vec<_> = (0..ds.len()).map(|i| key(&ds, i)).collect();
        let mut parts: Vec<_> = (0..train.len())
            .map(|i| key(&train, i))
            .chain((0..test.len()).map(|i| key(&test, i)))
            .collect();
        whole.sort();
        parts.sort();
        assert_eq!(whole, parts);
    }

    #[test]
    fn split_needs_two_points_per_class() {
        let ds = generate(&ring(3, 1, 0.5, 0)).unwrap();
        assert!(matches!(split(&ds, 0.5, 0), Err(Error::InsufficientPoints { .. })));
        let ds = generate(&ring(3, 4, 0.5, 0)).unwrap();
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 0.0, 0).is_err());
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let ds = generate(&ring(3, 5, 0.5, 2)).unwrap();
        ds.save(&path).unwrap();
        let back = LabeledDataset::load(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_bytes(), ds.to_bytes());
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let ds = generate(&ring(2, 3, 0.5, 2)).unwrap();
        let bytes = ds.to_bytes();
        let err = LabeledDataset::from_bytes(Path::new("t.bin"), &bytes[..bytes.len() - 3]).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::PayloadLength { expected: 96, actual: 93, .. }), "{msg}");
        assert!(msg.contains("96") && msg.contains("93"), "{msg}");
    }

    #[test]
    fn header_column_count_must_match_payload() {
        let header = r#"{"name":"x","n":2,"d":3,"num_classes":2,"labels":[0,1]}"#;
        let bytes = format::encode_framed(header, &[1.0, 2.0, 3.0, 4.0]);
        let err = LabeledDataset::from_bytes(Path::new("s.bin"), &bytes).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    }
}
