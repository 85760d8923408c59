use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use shiftadd_core::engine::EngineConfig;
use shiftadd_core::nn::ModelSpec;
use shiftadd_core::quant::{FixedPointFrame, QuantConfig};
use shiftadd_core::train::{KdConfig, TrainConfig};
use shiftadd_core::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantSettings {
    /// Terms per weight.
    pub n: usize,
    /// Bits per stored shift magnitude.
    pub bits: u8,
    pub fraction_bits: u32,
    pub integer_bits: u32,
}

impl Default for QuantSettings {
    fn default() -> Self {
        let frame = FixedPointFrame::default();
        Self {
            n: 3,
            bits: 3,
            fraction_bits: frame.fraction_bits,
            integer_bits: frame.integer_bits,
        }
    }
}

impl QuantSettings {
    pub fn frame(&self) -> Result<FixedPointFrame> {
        Ok(FixedPointFrame::new(self.fraction_bits, self.integer_bits)?)
    }

    pub fn quant_config(&self, n: usize) -> Result<QuantConfig> {
        Ok(QuantConfig {
            n,
            frame: self.frame()?,
            quantize_biases: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub folds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub bn_calibration_samples: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            folds: 5,
            epochs: t.max_epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            min_learning_rate: t.min_learning_rate,
            bn_calibration_samples: t.bn_calibration_samples,
        }
    }
}

/// Everything a run depends on besides its input files. Written into every
/// result document so a run can be replayed with `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// JSON model spec; the built-in student when absent.
    pub model_spec: Option<PathBuf>,
    /// Channel multiplier of the built-in student.
    pub width: usize,
    pub kd: KdConfig,
    pub quant: QuantSettings,
    pub engine: EngineConfig,
    pub train: TrainSettings,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model_spec: None,
            width: 1,
            kd: KdConfig::default(),
            quant: QuantSettings::default(),
            engine: EngineConfig::default(),
            train: TrainSettings::default(),
            out_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    /// Reads a bare config or the `config` member of a result document.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("tool").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value)
            .with_context(|| format!("config {} has unexpected fields", path.display()))
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        let spec = match &self.model_spec {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading model spec {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing model spec {}", p.display()))?
            }
            None => {
                if self.width == 0 {
                    return Err(Error::Config(format!("width must be at least 1")).into());
                }
                ModelSpec::student_with_width(self.width)
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self, kd: Option<KdConfig>) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            max_epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            min_learning_rate: self.train.min_learning_rate,
            bn_calibration_samples: self.train.bn_calibration_samples,
            kd,
            mode: Default::default(),
        }
    }
}
