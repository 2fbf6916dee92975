//! Artifact names, existence checks and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const TRAIN: &str = "train.ds";
pub const TEST: &str = "test.ds";
pub const CODEC: &str = "codec.ckpt";
pub const CODEC_LOSS: &str = "codec_loss.csv";
pub const DENOISER: &str = "denoiser.ckpt";
pub const DENOISER_LOSS: &str = "denoiser_loss.csv";
pub const CORESET: &str = "coreset.ds";
pub const DISTILLED: &str = "distilled.ds";
pub const DISTILL_LOSS: &str = "distill_loss.csv";
pub const RECONSTRUCTED: &str = "reconstructed.ds";
pub const SYNTHETIC: &str = "synthetic.ds";
pub const REPORT: &str = "report.csv";
pub const SUMMARY: &str = "summary.txt";

/// Candidate datasets in report order.
pub const CANDIDATES: [&str; 4] = [CORESET, DISTILLED, RECONSTRUCTED, SYNTHETIC];

/// The command that writes `artifact`.
pub fn producer(artifact: &str) -> &'static str {
    match artifact {
        TRAIN | TEST => "gen-data",
        CODEC | CODEC_LOSS => "train-codec",
        DENOISER | DENOISER_LOSS => "train-denoiser",
        CORESET | DISTILLED | DISTILL_LOSS => "distill",
        RECONSTRUCTED | SYNTHETIC => "refine",
        _ => "evaluate",
    }
}

/// Returns `dir/name`, failing with the producing command if it is absent.
pub fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if !path.is_file() {
        bail!(
            "missing artifact {}: produce it with `diver {}`",
            path.display(),
            producer(name)
        );
    }
    Ok(path)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_loss_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = format!("{header}\n");
    for (i, row) in rows.into_iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub config: RunConfig,
    pub from_distilled: Option<PathBuf>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_secs: f64,
}

impl Manifest {
    /// Digests `inputs` and `outputs` (paths relative to `dir` unless
    /// absolute) and writes `<command>.manifest.json` into `dir`.
    pub fn write(
        dir: &Path,
        command: &str,
        cfg: &RunConfig,
        from_distilled: Option<&Path>,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        wall: Duration,
    ) -> Result<PathBuf> {
        let digest = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| {
                    let key = p.strip_prefix(dir).unwrap_or(p).display().to_string();
                    Ok((key, sha256_file(p)?))
                })
                .collect()
        };
        let mut config = cfg.clone();
        config.out = None;
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config,
            from_distilled: from_distilled.map(Path::to_path_buf),
            inputs: digest(inputs)?,
            outputs: digest(outputs)?,
            wall_time_secs: wall.as_secs_f64(),
        };
        let path = dir.join(format!("{command}.manifest.json"));
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_artifact_names_its_producer() {
        let dir = tempfile::tempdir().unwrap();
        let err = require(dir.path(), DENOISER).unwrap_err().to_string();
        assert!(err.contains("diver train-denoiser"), "{err}");
        let err = require(dir.path(), TRAIN).unwrap_err().to_string();
        assert!(err.contains("diver gen-data"), "{err}");
    }

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
