//! Encoder/decoder pair mapping data space to the latent space the diffusion
//! model works in.
//!
//! The learned codec is a deterministic autoencoder: inputs are standardized
//! with per-dimension statistics of the training data, passed through a tanh
//! encoder to `latent_dim` and back through a tanh decoder. It is trained once
//! on the original data by full-batch gradient descent on the mean squared
//! reconstruction error and frozen afterwards. A narrow latent acts as an
//! information bottleneck: points off the training manifold are pulled toward
//! it by a round trip.
//!
//! The identity codec passes vectors through unchanged, which runs the whole
//! refinement in data space.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::format::Checkpoint;
use crate::nn::{Activation, Mlp, MlpGrad};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecMode {
    Identity,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub mode: CodecMode,
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            mode: CodecMode::Learned,
            latent_dim: 2,
            hidden_width: 32,
            epochs: 2000,
            lr: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Codec {
    Identity { dim: usize },
    Learned(LearnedCodec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedCodec {
    shift: Array1<f64>,
    scale: Array1<f64>,
    encoder: Mlp,
    decoder: Mlp,
    final_loss: f64,
}

pub struct CodecGrad {
    pub encoder: MlpGrad,
    pub decoder: MlpGrad,
}

impl LearnedCodec {
    fn init(data: &LabeledDataset, cfg: &CodecConfig) -> Result<Self> {
        let d = data.dim();
        let n = data.len() as f64;
        let shift = data.features.mean_axis(Axis(0)).expect("nonempty dataset");
        let scale = data
            .features
            .var_axis(Axis(0), 0.0)
            .mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        debug_assert!(n > 0.0);
        let mut r = rng::stream(cfg.seed, streams::CODEC_INIT);
        let w = cfg.hidden_width;
        let encoder = Mlp::new(&[d, w, cfg.latent_dim], Activation::Tanh, &mut r)?;
        let decoder = Mlp::new(&[cfg.latent_dim, w, d], Activation::Tanh, &mut r)?;
        Ok(LearnedCodec {
            shift,
            scale,
            encoder,
            decoder,
            final_loss: f64::NAN,
        })
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    fn standardize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.shift) / &self.scale
    }

    fn encode_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.encoder.forward(self.standardize(x).view())
    }

    fn decode_batch(&self, z: ArrayView2<f64>) -> Array2<f64> {
        self.decoder.forward(z) * &self.scale + &self.shift
    }

    /// Mean squared reconstruction error over all entries of `x`, with gradients.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>) -> (f64, CodecGrad) {
        let count = x.len() as f64;
        let enc = self.encoder.forward_traced(self.standardize(x).view());
        let dec = self.decoder.forward_traced(enc.output().view());
        let recon = dec.output() * &self.scale + &self.shift;
        let resid = recon - &x;
        let loss = resid.mapv(|v| v * v).sum() / count;
        let d_out = resid * &self.scale * (2.0 / count);
        let (g_dec, d_z) = self.decoder.backward(&dec, d_out.view());
        let (g_enc, _) = self.encoder.backward(&enc, d_z.view());
        (
            loss,
            CodecGrad {
                encoder: g_enc,
                decoder: g_dec,
            },
        )
    }

    pub fn loss(&self, x: ArrayView2<f64>) -> f64 {
        let recon = self.decode_batch(self.encode_batch(x).view());
        (recon - &x).mapv(|v| v * v).sum() / x.len() as f64
    }

    /// Encoder parameters followed by decoder parameters.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.encoder.flat_params();
        p.extend(self.decoder.flat_params());
        p
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        let n = self.encoder.num_params();
        if params.len() != n + self.decoder.num_params() {
            return Err(Error::DimensionMismatch {
                context: "codec parameter vector",
                expected: n + self.decoder.num_params(),
                actual: params.len(),
            });
        }
        self.encoder.set_flat_params(&params[..n])?;
        self.decoder.set_flat_params(&params[n..])
    }
}

/// A trained codec together with its per-epoch reconstruction loss.
#[derive(Debug, Clone)]
pub struct TrainedCodec {
    pub codec: Codec,
    pub loss_trace: Vec<f64>,
}

pub fn train_codec(data: &LabeledDataset, cfg: &CodecConfig) -> Result<TrainedCodec> {
    if data.is_empty() {
        return Err(Error::invalid("codec training data is empty"));
    }
    if cfg.latent_dim == 0 {
        return Err(Error::invalid("latent_dim must be >= 1"));
    }
    match cfg.mode {
        CodecMode::Identity => {
            if cfg.latent_dim != data.dim() {
                return Err(Error::invalid(format!(
                    "identity codec needs latent_dim == data dim ({}), got {}",
                    data.dim(),
                    cfg.latent_dim
                )));
            }
            Ok(TrainedCodec {
                codec: Codec::Identity { dim: data.dim() },
                loss_trace: Vec::new(),
            })
        }
        CodecMode::Learned => {
            if !(cfg.lr.is_finite() && cfg.lr > 0.0) || cfg.hidden_width == 0 {
                return Err(Error::invalid("codec needs lr > 0 and hidden_width >= 1"));
            }
            let mut codec = LearnedCodec::init(data, cfg)?;
            let x = data.features.view();
            let mut trace = Vec::with_capacity(cfg.epochs);
            for epoch in 0..cfg.epochs {
                let (loss, grad) = codec.loss_and_grad(x);
                if !loss.is_finite() {
                    return Err(Error::Divergence { stage: "codec", epoch });
                }
                trace.push(loss);
                codec.encoder.apply_gradient(&grad.encoder, cfg.lr);
                codec.decoder.apply_gradient(&grad.decoder, cfg.lr);
            }
            let final_loss = codec.loss(x);
            if !final_loss.is_finite() || !codec.encoder.all_finite() || !codec.decoder.all_finite() {
                return Err(Error::Divergence {
                    stage: "codec",
                    epoch: cfg.epochs,
                });
            }
            codec.final_loss = final_loss;
            Ok(TrainedCodec {
                codec: Codec::Learned(codec),
                loss_trace: trace,
            })
        }
    }
}

impl Codec {
    pub fn identity(dim: usize) -> Self {
        Codec::Identity { dim }
    }

    pub fn mode(&self) -> CodecMode {
        match self {
            Codec::Identity { .. } => CodecMode::Identity,
            Codec::Learned(_) => CodecMode::Learned,
        }
    }

    pub fn data_dim(&self) -> usize {
        match self {
            Codec::Identity { dim } => *dim,
            Codec::Learned(c) => c.shift.len(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Codec::Identity { dim } => *dim,
            Codec::Learned(c) => c.encoder.output_dim(),
        }
    }

    /// Reconstruction MSE recorded at the end of training (0 for identity).
    pub fn final_loss(&self) -> f64 {
        match self {
            Codec::Identity { .. } => 0.0,
            Codec::Learned(c) => c.final_loss,
        }
    }

    pub fn as_learned(&self) -> Option<&LearnedCodec> {
        match self {
            Codec::Learned(c) => Some(c),
            Codec::Identity { .. } => None,
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("encode input", self.data_dim(), x.len())?;
        match self {
            Codec::Identity { .. } => Ok(x.to_vec()),
            Codec::Learned(c) => {
                let view = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
                Ok(c.encode_batch(view).into_raw_vec_and_offset().0)
            }
        }
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("decode input", self.latent_dim(), z.len())?;
        match self {
            Codec::Identity { .. } => Ok(z.to_vec()),
            Codec::Learned(c) => {
                let view = ArrayView2::from_shape((1, z.len()), z).expect("row shape");
                Ok(c.decode_batch(view).into_raw_vec_and_offset().0)
            }
        }
    }

    pub fn encode_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("encode input", self.data_dim(), x.ncols())?;
        Ok(match self {
            Codec::Identity { .. } => x.to_owned(),
            Codec::Learned(c) => c.encode_batch(x),
        })
    }

    pub fn decode_batch(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("decode input", self.latent_dim(), z.ncols())?;
        Ok(match self {
            Codec::Identity { .. } => z.to_owned(),
            Codec::Learned(c) => c.decode_batch(z),
        })
    }

    /// `decode(encode(x))` for every row, labels unchanged.
    pub fn reconstruct(&self, ds: &LabeledDataset, name: &str) -> Result<LabeledDataset> {
        let z = self.encode_batch(ds.features.view())?;
        let x = self.decode_batch(z.view())?;
        LabeledDataset::new(name, x, ds.labels.clone(), ds.num_classes)
    }

    pub fn reconstruction_mse(&self, ds: &LabeledDataset) -> Result<f64> {
        let z = self.encode_batch(ds.features.view())?;
        let x = self.decode_batch(z.view())?;
        Ok((x - &ds.features).mapv(|v| v * v).sum() / ds.features.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            Codec::Identity { dim } => Checkpoint::new(serde_json::json!({
                "kind": "codec",
                "mode": "identity",
                "data_dim": dim,
                "latent_dim": dim,
            })),
            Codec::Learned(c) => {
                let mut ck = Checkpoint::new(serde_json::json!({
                    "kind": "codec",
                    "mode": "learned",
                    "data_dim": c.shift.len(),
                    "latent_dim": c.encoder.output_dim(),
                    "activation": c.encoder.activation(),
                    "final_loss": c.final_loss,
                }));
                ck.push("shift", vec![c.shift.len()], c.shift.to_vec());
                ck.push("scale", vec![c.scale.len()], c.scale.to_vec());
                c.encoder.push_to(&mut ck, "encoder");
                c.decoder.push_to(&mut ck, "decoder");
                ck
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(path, &Checkpoint::load(path)?)
    }

    pub fn from_checkpoint(path: &Path, ck: &Checkpoint) -> Result<Self> {
        let malformed = |reason: &str| Error::Malformed {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if ck.meta.get("kind").and_then(|v| v.as_str()) != Some("codec") {
            return Err(malformed("not a codec checkpoint"));
        }
        let dim = |key: &str| {
            ck.meta
                .get(key)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| malformed(&format!("missing {key}")))
        };
        let data_dim = dim("data_dim")?;
        let latent_dim = dim("latent_dim")?;
        match ck.meta.get("mode").and_then(|v| v.as_str()) {
            Some("identity") => Ok(Codec::Identity { dim: data_dim }),
            Some("learned") => {
                let activation = ck
                    .meta
                    .get("activation")
                    .and_then(|v| v.as_str())
                    .map(Activation::parse)
                    .transpose()?
                    .unwrap_or(Activation::Tanh);
                let shift = ck.expect(path, "shift", &[data_dim])?.data.clone();
                let scale = ck.expect(path, "scale", &[data_dim])?.data.clone();
                let encoder = Mlp::read_from(ck, path, "encoder", activation)?;
                let decoder = Mlp::read_from(ck, path, "decoder", activation)?;
                if encoder.input_dim() != data_dim
                    || encoder.output_dim() != latent_dim
                    || decoder.input_dim() != latent_dim
                    || decoder.output_dim() != data_dim
                {
                    return Err(Error::ShapeMismatch {
                        path: path.to_path_buf(),
                        reason: "encoder/decoder shapes disagree with data_dim/latent_dim".into(),
                    });
                }
                let final_loss = ck.meta.get("final_loss").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
                Ok(Codec::Learned(LearnedCodec {
                    shift: Array1::from_vec(shift),
                    scale: Array1::from_vec(scale),
                    encoder,
                    decoder,
                    final_loss,
                }))
            }
            _ => Err(malformed("unknown codec mode")),
        }
    }
}

fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
