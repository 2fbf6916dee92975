//! Fully connected networks with hand-written backpropagation.
//!
//! Every learned component in the crate (codec, denoiser trunk, prior
//! embedders, evaluation classifiers) is an [`Mlp`]: dense layers with a shared
//! hidden activation and a linear output layer. Batches are row-major, one
//! sample per row.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::Checkpoint;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `pre` and the output `out`.
    #[inline]
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

/// A dense layer `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Gaussian init: He scaling ahead of relu, Glorot otherwise. Biases start at zero.
    pub fn init(input: usize, output: usize, next: Activation, rng: &mut Rng) -> Self {
        let std = match next {
            Activation::Relu => (2.0 / input as f64).sqrt(),
            _ => (2.0 / (input + output) as f64).sqrt(),
        };
        let weight = Array2::from_shape_fn((input, output), |_| std * rng::normal(rng));
        Dense {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
}

/// Intermediate values of a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to every layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every layer; the last entry is the network output.
    pre: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().expect("mlp has at least one layer")
    }
}

/// Parameter gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<Dense>,
}

impl MlpGrad {
    pub fn norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().map(|v| v * v).sum::<f64>() + l.bias.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}

impl Mlp {
    /// Builds a network with layer sizes `sizes[0] -> sizes[1] -> ... -> sizes[n]`.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let next = if i + 1 == n { Activation::Identity } else { activation };
                Dense::init(sizes[i], sizes[i + 1], next, rng)
            })
            .collect();
        Ok(Mlp { layers, activation })
    }

    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("mlp needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "mlp layer chain",
                    expected: pair[0].output_dim(),
                    actual: pair[1].input_dim(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::DimensionMismatch {
                    context: "mlp bias",
                    expected: l.output_dim(),
                    actual: l.bias.len(),
                });
            }
        }
        Ok(Mlp { layers, activation })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Sets the final layer to zero so the network outputs exactly zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.len() - 1;
        let l = &mut self.layers[last];
        l.weight.fill(0.0);
        l.bias.fill(0.0);
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut pre = h.dot(&l.weight);
            pre += &l.bias;
            if i < last {
                pre.mapv_inplace(|v| self.activation.apply(v));
            }
            h = pre;
        }
        h
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector shape");
        self.forward(view).into_raw_vec_and_offset().0
    }

    pub fn forward_traced(&self, x: ArrayView2<f64>) -> Trace {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_all = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut pre = h.dot(&l.weight);
            pre += &l.bias;
            let next = if i < last {
                pre.mapv(|v| self.activation.apply(v))
            } else {
                Array2::zeros((0, 0))
            };
            inputs.push(h);
            pre_all.push(pre);
            h = next;
        }
        Trace {
            inputs,
            pre: pre_all,
        }
    }

    /// Backpropagates `d_out = dL/d(output)` and returns parameter gradients
    /// together with `dL/d(input)`.
    pub fn backward(&self, trace: &Trace, d_out: ArrayView2<f64>) -> (MlpGrad, Array2<f64>) {
        let n = self.layers.len();
        let mut grads: Vec<Dense> = Vec::with_capacity(n);
        let mut delta = d_out.to_owned();
        for i in (0..n).rev() {
            let l = &self.layers[i];
            let input = &trace.inputs[i];
            let weight = input.t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Dense { weight, bias });
            let mut d_in = delta.dot(&l.weight.t());
            if i > 0 {
                let pre = &trace.pre[i - 1];
                let out = &trace.inputs[i];
                let act = self.activation;
                ndarray::Zip::from(&mut d_in)
                    .and(pre)
                    .and(out)
                    .for_each(|d, &p, &o| *d *= act.derivative(p, o));
            }
            delta = d_in;
        }
        grads.reverse();
        (MlpGrad { layers: grads }, delta)
    }

    /// `params -= lr * grad`.
    pub fn apply_gradient(&mut self, grad: &MlpGrad, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            l.weight.scaled_add(-lr, &g.weight);
            l.bias.scaled_add(-lr, &g.bias);
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// Parameters in layer order, weights row-major before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                context: "mlp parameter vector",
                expected: self.num_params(),
                actual: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Appends `{prefix}.{i}.weight` / `{prefix}.{i}.bias` tensors for every layer.
    pub fn push_to(&self, ck: &mut Checkpoint, prefix: &str) {
        for (i, l) in self.layers.iter().enumerate() {
            ck.push(
                format!("{prefix}.{i}.weight"),
                vec![l.input_dim(), l.output_dim()],
                l.weight.iter().copied().collect(),
            );
            ck.push(format!("{prefix}.{i}.bias"), vec![l.output_dim()], l.bias.to_vec());
        }
    }

    /// Reads the layers written by [`Mlp::push_to`].
    pub fn read_from(ck: &Checkpoint, path: &Path, prefix: &str, activation: Activation) -> Result<Self> {
        let mut layers = Vec::new();
        while let Some(w) = ck.get(&format!("{prefix}.{}.weight", layers.len())) {
            let i = layers.len();
            if w.shape.len() != 2 {
                return Err(Error::ShapeMismatch {
                    path: path.to_path_buf(),
                    reason: format!("{prefix}.{i}.weight must be 2-d, got {:?}", w.shape),
                });
            }
            let (rows, cols) = (w.shape[0], w.shape[1]);
            let b = ck.expect(path, &format!("{prefix}.{i}.bias"), &[cols])?;
            layers.push(Dense {
                weight: Array2::from_shape_vec((rows, cols), w.data.clone()).expect("shape checked"),
                bias: Array1::from_vec(b.data.clone()),
            });
        }
        if layers.is_empty() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("no layers under {prefix:?}"),
            });
        }
        Mlp::from_layers(layers, activation).map_err(|e| Error::ShapeMismatch {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Finite-difference helpers shared by the gradient-check tests.
#[doc(hidden)]
pub mod check {
    /// Central difference of `f` around `x` along every coordinate.
    pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = probe[i];
                probe[i] = orig + h;
                let up = f(&probe);
                probe[i] = orig - h;
                let down = f(&probe);
                probe[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// `||a - b|| / max(||a||, ||b||, floor)`.
    pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::Array2;

    fn squared_loss(mlp: &Mlp, x: &Array2<f64>, target: &Array2<f64>) -> f64 {
        let y = mlp.forward(x.view());
        (&y - target).mapv(|v| v * v).sum() * 0.5
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, act) in [(1, Activation::Tanh), (2, Activation::Relu), (3, Activation::Identity)] {
            let mut rng = stream(seed, 0);
            let mlp = Mlp::new(&[3, 5, 4, 2], act, &mut rng).unwrap();
            let x = Array2::from_shape_fn((6, 3), |_| rng::normal(&mut rng));
            let target = Array2::from_shape_fn((6, 2), |_| rng::normal(&mut rng));

            let trace = mlp.forward_traced(x.view());
            let d_out = trace.output() - &target;
            let (grad, d_in) = mlp.backward(&trace, d_out.view());

            let params = mlp.flat_params();
            let numeric = check::central_difference(&params, 1e-6, |p| {
                let mut m = mlp.clone();
                m.set_flat_params(p).unwrap();
                squared_loss(&m, &x, &target)
            });
            let err = check::relative_error(&grad.flatten(), &numeric);
            assert!(err < 1e-5, "{act:?}: param grad rel err {err}");

            let flat_x: Vec<f64> = x.iter().copied().collect();
            let numeric_x = check::central_difference(&flat_x, 1e-6, |v| {
                let xv = Array2::from_shape_vec((6, 3), v.to_vec()).unwrap();
                squared_loss(&mlp, &xv, &target)
            });
            let analytic_x: Vec<f64> = d_in.iter().copied().collect();
            let err = check::relative_error(&analytic_x, &numeric_x);
            assert!(err < 1e-5, "{act:?}: input grad rel err {err}");
        }
    }

    #[test]
    fn zeroed_output_layer_gives_zero_output() {
        let mut rng = stream(4, 0);
        let mut mlp = Mlp::new(&[2, 8, 3], Activation::Tanh, &mut rng).unwrap();
        mlp.zero_output_layer();
        assert_eq!(mlp.forward_one(&[0.3, -7.0]), vec![0.0; 3]);
    }

    #[test]
    fn traced_forward_agrees_with_plain_forward() {
        let mut rng = stream(5, 0);
        let mlp = Mlp::new(&[2, 4, 4, 3], Activation::Relu, &mut rng).unwrap();
        let x = Array2::from_shape_fn((3, 2), |_| rng::normal(&mut rng));
        assert_eq!(mlp.forward(x.view()), *mlp.forward_traced(x.view()).output());
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = stream(6, 0);
        assert!(Mlp::new(&[2], Activation::Tanh, &mut rng).is_err());
        assert!(Mlp::new(&[2, 0, 1], Activation::Tanh, &mut rng).is_err());
        let bad = vec![Dense::zeros(2, 3), Dense::zeros(4, 1)];
        assert!(Mlp::from_layers(bad, Activation::Tanh).is_err());
    }
}
