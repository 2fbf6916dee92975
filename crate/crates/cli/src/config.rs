//! Run configuration: a TOML document with one section per stage.
//!
//! Every key has a default, so an empty file (or no file) is a valid
//! configuration. Unknown keys are rejected with their full path. Stage
//! seeds are not configured directly; each is derived from the global seed.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use diver_core::codec::{CodecConfig, CodecMode};
use diver_core::datagen::{DataSpec, Family};
use diver_core::denoiser::{DenoiserArch, TrainConfig};
use diver_core::distill::{DistillConfig, EmbedderKind, InitMode};
use diver_core::evaluate::EvalConfig;
use diver_core::refine::{GuidanceSigma, RefineConfig};
use diver_core::rng::{self, streams};
use diver_core::schedule::{make_grid, make_schedule, NoiseSchedule, StepGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub codec: CodecSection,
    pub denoiser: DenoiserSection,
    pub distill: DistillSection,
    pub refine: RefineSection,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            data: DataSection::default(),
            codec: CodecSection::default(),
            denoiser: DenoiserSection::default(),
            distill: DistillSection::default(),
            refine: RefineSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub family: Family,
    pub num_classes: usize,
    pub points_per_class: usize,
    pub dim: usize,
    pub noise_std: f64,
    pub train_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let spec = DataSpec::default();
        DataSection {
            family: spec.family,
            num_classes: spec.num_classes,
            points_per_class: spec.points_per_class,
            dim: spec.dim,
            noise_std: spec.noise_std,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub mode: CodecMode,
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for CodecSection {
    fn default() -> Self {
        let c = CodecConfig::default();
        CodecSection {
            mode: c.mode,
            latent_dim: c.latent_dim,
            hidden_width: c.hidden_width,
            epochs: c.epochs,
            lr: c.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub num_train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub num_sample_steps: usize,
    pub embed_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub null_drop_prob: f64,
    pub clip_norm: f64,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        let a = DenoiserArch::default();
        let t = TrainConfig::default();
        DenoiserSection {
            num_train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            num_sample_steps: 50,
            embed_dim: a.embed_dim,
            hidden_width: a.hidden_width,
            hidden_layers: a.hidden_layers,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            null_drop_prob: t.null_drop_prob,
            clip_norm: t.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub ipc: usize,
    pub iterations: usize,
    pub lr: f64,
    pub num_embedders: usize,
    pub embedder: EmbedderKind,
    pub embed_hidden: usize,
    pub embed_dim: usize,
    pub init: InitMode,
    pub hook_strength: f64,
    pub hook_frequency: f64,
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        DistillSection {
            ipc: d.ipc,
            iterations: d.iterations,
            lr: d.lr,
            num_embedders: d.num_embedders,
            embedder: d.embedder,
            embed_hidden: d.embed_hidden,
            embed_dim: d.embed_dim,
            init: d.init,
            hook_strength: d.hook_strength,
            hook_frequency: d.hook_frequency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSection {
    pub t_f: usize,
    pub t_r: usize,
    pub t_h: usize,
    pub t_l: usize,
    pub gamma: f64,
    pub omega: f64,
    pub guidance_sigma: GuidanceSigma,
    pub eta: f64,
    pub start_at_t_f: bool,
    pub cfg_semantic_off: bool,
}

impl Default for RefineSection {
    fn default() -> Self {
        let r = RefineConfig::default();
        RefineSection {
            t_f: r.t_f,
            t_r: r.t_r,
            t_h: r.t_h,
            t_l: r.t_l,
            gamma: r.gamma,
            omega: r.omega,
            guidance_sigma: r.guidance_sigma,
            eta: r.eta,
            start_at_t_f: r.start_at_t_f,
            cfg_semantic_off: r.cfg_semantic_off,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub trials: usize,
    pub epochs: usize,
    pub lr: f64,
    pub rff_lr: f64,
    pub rff_features: usize,
    pub rff_bandwidth: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvaluateSection {
            trials: e.trials,
            epochs: e.epochs,
            lr: e.lr,
            rff_lr: e.rff_lr,
            rff_features: e.rff_features,
            rff_bandwidth: e.rff_bandwidth,
        }
    }
}

impl RunConfig {
    /// Parses a TOML run config, or the `config` field of a JSON manifest.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_manifest_str(&text).with_context(|| format!("in manifest {}", path.display()))?
        } else {
            Self::from_toml_str(&text).with_context(|| format!("in config {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| anyhow::anyhow!("invalid TOML: {e}"))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("invalid config at `{path}`: {}", e.into_inner().message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_manifest_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).context("manifest is not valid JSON")?;
        let Some(config) = value.get("config") else {
            bail!("manifest has no `config` field");
        };
        let cfg: RunConfig = serde_path_to_error::deserialize(config).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("invalid config at `config.{path}`: {}", e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks value ranges, naming the offending section.
    pub fn validate(&self) -> Result<()> {
        self.data_spec()
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid config at `data`: {e}"))?;
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            bail!(
                "invalid config at `data.train_fraction`: must lie in (0, 1), got {}",
                self.data.train_fraction
            );
        }
        if self.codec.latent_dim == 0 {
            bail!("invalid config at `codec.latent_dim`: must be >= 1");
        }
        if self.codec.mode == CodecMode::Identity && self.codec.latent_dim != self.data.dim {
            bail!(
                "invalid config at `codec.latent_dim`: identity codec needs latent_dim == data.dim ({})",
                self.data.dim
            );
        }
        let d = &self.denoiser;
        if d.num_sample_steps == 0 || d.num_sample_steps > d.num_train_steps {
            bail!("invalid config at `denoiser.num_sample_steps`: must lie in 1..={}", d.num_train_steps);
        }
        if !(0.0..1.0).contains(&d.null_drop_prob) {
            bail!("invalid config at `denoiser.null_drop_prob`: must lie in [0, 1)");
        }
        self.schedule().map_err(|e| anyhow::anyhow!("invalid config at `denoiser`: {e}"))?;
        self.distill_config()
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid config at `distill`: {e}"))?;
        self.refine_config()
            .validate(d.num_sample_steps)
            .map_err(|e| anyhow::anyhow!("invalid config at `refine`: {e}"))?;
        self.eval_config()
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid config at `evaluate`: {e}"))?;
        Ok(())
    }

    pub fn stage_seed(&self, stream: u64) -> u64 {
        rng::mix(self.seed, stream)
    }

    pub fn data_spec(&self) -> DataSpec {
        DataSpec {
            family: self.data.family,
            num_classes: self.data.num_classes,
            points_per_class: self.data.points_per_class,
            dim: self.data.dim,
            noise_std: self.data.noise_std,
            seed: self.stage_seed(streams::DATAGEN),
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.stage_seed(streams::SPLIT)
    }

    pub fn codec_config(&self) -> CodecConfig {
        CodecConfig {
            mode: self.codec.mode,
            latent_dim: self.codec.latent_dim,
            hidden_width: self.codec.hidden_width,
            epochs: self.codec.epochs,
            lr: self.codec.lr,
            seed: self.stage_seed(streams::CODEC_INIT),
        }
    }

    /// Noise schedule with the refinement `eta`.
    pub fn schedule(&self) -> diver_core::Result<NoiseSchedule> {
        let d = &self.denoiser;
        make_schedule(d.num_train_steps, d.beta_start, d.beta_end, self.refine.eta)
    }

    pub fn grid(&self, schedule: &NoiseSchedule) -> diver_core::Result<StepGrid> {
        make_grid(schedule, self.denoiser.num_sample_steps)
    }

    pub fn denoiser_arch(&self) -> DenoiserArch {
        DenoiserArch {
            embed_dim: self.denoiser.embed_dim,
            hidden_width: self.denoiser.hidden_width,
            hidden_layers: self.denoiser.hidden_layers,
        }
    }

    pub fn denoiser_train(&self) -> TrainConfig {
        let d = &self.denoiser;
        TrainConfig {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            null_drop_prob: d.null_drop_prob,
            clip_norm: d.clip_norm,
            seed: self.stage_seed(streams::DENOISER_INIT),
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        let d = &self.distill;
        DistillConfig {
            ipc: d.ipc,
            iterations: d.iterations,
            lr: d.lr,
            num_embedders: d.num_embedders,
            embedder: d.embedder,
            embed_hidden: d.embed_hidden,
            embed_dim: d.embed_dim,
            init: d.init,
            hook_strength: d.hook_strength,
            hook_frequency: d.hook_frequency,
            seed: self.stage_seed(streams::DISTILL_INIT),
        }
    }

    pub fn coreset_seed(&self) -> u64 {
        self.stage_seed(streams::DISTILL_EVAL)
    }

    pub fn refine_config(&self) -> RefineConfig {
        let r = &self.refine;
        RefineConfig {
            t_f: r.t_f,
            t_r: r.t_r,
            t_h: r.t_h,
            t_l: r.t_l,
            gamma: r.gamma,
            omega: r.omega,
            guidance_sigma: r.guidance_sigma,
            eta: r.eta,
            start_at_t_f: r.start_at_t_f,
            cfg_semantic_off: r.cfg_semantic_off,
            seed: self.stage_seed(streams::REFINE),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        let e = &self.evaluate;
        EvalConfig {
            trials: e.trials,
            epochs: e.epochs,
            lr: e.lr,
            rff_lr: e.rff_lr,
            rff_features: e.rff_features,
            rff_bandwidth: e.rff_bandwidth,
            seed: self.stage_seed(streams::EVALUATE),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = RunConfig::from_toml_str("[refine]\nt_z = 3\n").unwrap_err().to_string();
        assert!(err.contains("refine"), "{err}");
        assert!(err.contains("t_z"), "{err}");
    }

    #[test]
    fn bad_values_report_their_section() {
        let err = RunConfig::from_toml_str("[refine]\nt_l = 45\n").unwrap_err().to_string();
        assert!(err.contains("`refine`"), "{err}");
        let err = RunConfig::from_toml_str("[data]\nfamily = \"moons\"\n").unwrap_err().to_string();
        assert!(err.contains("data.family"), "{err}");
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = RunConfig::default();
        assert_ne!(cfg.codec_config().seed, cfg.denoiser_train().seed);
        assert_ne!(cfg.refine_config().seed, cfg.distill_config().seed);
    }
}
