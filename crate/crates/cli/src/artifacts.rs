use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use shiftadd_core::data::{dataset_ingest, Dataset, Normalizer, FRAME_SHAPE};
use shiftadd_core::fsutil::write_atomic;
use shiftadd_core::nn::sacw::{read_sacw, write_sacw};
use shiftadd_core::nn::{ModelParams, ModelSpec, CLASS_NAMES};
use shiftadd_core::quant::{read_saqm, write_saqm, QuantizedModel};
use shiftadd_core::tensor::Shape;
use shiftadd_core::Error;

use crate::config::RunConfig;

pub const TOOL: &str = "shiftadd-dvs";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sidecar stored next to every model file as `<file>.meta.json`. The binary
/// containers do not record the input size or the input standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub input: Shape,
    pub normalizer: Normalizer,
    pub class_names: Vec<String>,
}

impl ModelMeta {
    pub fn new(input: Shape, normalizer: Normalizer) -> Self {
        Self {
            input,
            normalizer,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub enum Model {
    Float {
        spec: ModelSpec,
        params: ModelParams,
    },
    Quantized(QuantizedModel),
}

pub struct LoadedModel {
    pub model: Model,
    pub meta: ModelMeta,
}

pub fn meta_path(model: &Path) -> PathBuf {
    let mut name = model.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    model.with_file_name(name)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_meta(path: &Path, meta: &ModelMeta) -> Result<()> {
    write_file(&meta_path(path), &serde_json::to_vec_pretty(meta)?)
}

pub fn save_float(
    path: &Path,
    spec: &ModelSpec,
    params: &ModelParams,
    normalizer: Normalizer,
) -> Result<()> {
    write_file(path, &write_sacw(spec, params)?)?;
    write_meta(path, &ModelMeta::new(spec.input, normalizer))
}

pub fn save_quantized(path: &Path, q: &QuantizedModel, normalizer: Normalizer) -> Result<()> {
    write_file(path, &write_saqm(q)?)?;
    write_meta(path, &ModelMeta::new(q.spec.input, normalizer))
}

/// Loads a SACW or SAQM file, recognised by its magic. Without a sidecar the
/// input is taken to be a raw, already standardized 256x11 frame.
pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let bytes = std::fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    let mp = meta_path(path);
    let meta = if mp.exists() {
        let text =
            std::fs::read_to_string(&mp).with_context(|| format!("reading {}", mp.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", mp.display()))?
    } else {
        ModelMeta::new(FRAME_SHAPE, Normalizer::default())
    };
    let (rows, cols) = (meta.input.rows, meta.input.cols);
    let model = match bytes.get(..4) {
        Some(b"SACW") => {
            let (spec, params) = read_sacw(&bytes, rows, cols)
                .with_context(|| format!("loading {}", path.display()))?;
            Model::Float { spec, params }
        }
        Some(b"SAQM") => Model::Quantized(
            read_saqm(&bytes, rows, cols).with_context(|| format!("loading {}", path.display()))?,
        ),
        _ => {
            return Err(Error::Format(format!(
                "{} is neither a SACW nor a SAQM model",
                path.display()
            ))
            .into())
        }
    };
    Ok(LoadedModel { model, meta })
}

pub fn load_dataset(path: &Path, shape: Shape) -> Result<Dataset> {
    dataset_ingest(path, shape).with_context(|| format!("loading dataset {}", path.display()))
}

#[derive(Serialize)]
struct ResultDoc<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
    result: &'a T,
}

/// Writes `<out_dir>/<command>.json` and returns its path.
pub fn write_result<T: Serialize>(cfg: &RunConfig, command: &str, result: &T) -> Result<PathBuf> {
    let doc = ResultDoc {
        tool: TOOL,
        version: VERSION,
        command,
        config: cfg,
        result,
    };
    let path = cfg.out_dir.join(format!("{command}.json"));
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    write_file(&path, &bytes)?;
    Ok(path)
}
