//! Experiment configuration files (TOML, strict schema).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stzoo_core::sampling::Strategy;
use stzoo_core::schedule::{EvalProtocol, TrainProtocol};
use stzoo_core::{ArchSpec, Backbone, Family};

use crate::datapipe::Protocol;
use crate::error::{io_err, Result, StzooError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory for checkpoints, logs and reports.
    pub out: PathBuf,
    pub arch: ArchSpec,
    pub data: DataConfig,
    pub sampler: SamplerSection,
    pub init: InitConfig,
    pub train: TrainProtocol,
    pub eval: EvalProtocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset name recorded in results.
    pub dataset: String,
    /// Training manifest CSV.
    pub manifest: PathBuf,
    /// Evaluation manifest CSV; defaults to the training one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_manifest: Option<PathBuf>,
    /// Input side after preprocessing (224 at paper scale).
    pub size: usize,
    pub train_protocol: Protocol,
    pub eval_protocol: Protocol,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub strategy: Strategy,
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Scratch,
    Imagenet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub kind: InitKind,
    /// Pretrained archive; defaults to `$STZOO_WEIGHTS/<backbone>.stzw`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    /// Desk-scale TSN-TinyNet on a two-class manifest.
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            arch: ArchSpec::new(Family::Tsn, Backbone::TinyNet, 8, 2),
            data: DataConfig {
                dataset: "synthetic".into(),
                manifest: PathBuf::from("manifest.csv"),
                eval_manifest: None,
                size: 32,
                train_protocol: Protocol::MiniEval,
                eval_protocol: Protocol::MiniEval,
            },
            sampler: SamplerSection { strategy: Strategy::Uniform, stride: 1 },
            init: InitConfig { kind: InitKind::Scratch, weights: None },
            train: TrainProtocol::desk(),
            eval: EvalProtocol::clip(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.ensure_valid()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.sampler.stride == 0 {
            return Err(StzooError::Invalid("sampler.stride must be positive".into()));
        }
        if self.data.size == 0 {
            return Err(StzooError::Invalid("data.size must be positive".into()));
        }
        if let Some(&first) = self.train.progressive.first() {
            if first != self.arch.frames {
                return Err(stzoo_core::Error::BrokenChain(format!(
                    "progressive chain starts at {first} frames but arch.frames is {}",
                    self.arch.frames
                ))
                .into());
            }
        }
        Ok(())
    }

    pub fn eval_manifest(&self) -> &Path {
        self.data.eval_manifest.as_deref().unwrap_or(&self.data.manifest)
    }
}

pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| StzooError::Config { path: path.into(), msg: e.to_string() })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text, path)
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let text = toml::to_string(cfg).map_err(|e| StzooError::Config { path: path.into(), msg: e.to_string() })?;
    std::fs::write(path, text).map_err(io_err(path))
}
