mod data;
mod quant;
mod run;
mod train;

use anyhow::Result;
use clap::Subcommand;
use serde::Serialize;
use shiftadd_core::data::{Normalizer, Sample};
use shiftadd_core::engine::ShiftEngine;
use shiftadd_core::nn::{argmax, fold_model, ModelParams, ModelSpec};
use shiftadd_core::par::{self, ExecMode};
use shiftadd_core::quant::{dequantize_model, shift_quantize_model, QuantizedModel};

use crate::artifacts::{LoadedModel, Model};
use crate::config::RunConfig;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic base and shifted datasets.
    GenData(data::GenDataArgs),
    /// Turn a CSV (or any readable sample source) into a DVSF dataset.
    Convert(data::ConvertArgs),
    /// Dump one layer's activations per sample as CSV.
    ExportFeatures(data::ExportArgs),
    /// Train the student on hard labels with stratified k-fold.
    Train(train::TrainArgs),
    /// Train the student against teacher logits.
    Distill(train::DistillArgs),
    /// Power-of-two quantization, sweeping the term count.
    Quantize(quant::QuantizeArgs),
    /// Biased binary encoding of shift magnitudes, sweeping the bit width.
    Encode(quant::EncodeArgs),
    /// Classify samples with the float model or the shift-add engine.
    Infer(run::InferArgs),
    /// Stream one frame through line-buffered stages.
    Simulate(run::SimulateArgs),
    /// Compression, throughput and parameter count tables.
    Report(run::ReportArgs),
}

impl Command {
    pub fn run(&self, cfg: &mut RunConfig, mode: ExecMode) -> Result<()> {
        match self {
            Self::GenData(a) => data::gen_data(a, cfg),
            Self::Convert(a) => data::convert(a, cfg),
            Self::ExportFeatures(a) => data::export(a, cfg, mode),
            Self::Train(a) => train::train(a, cfg, mode),
            Self::Distill(a) => train::distill(a, cfg, mode),
            Self::Quantize(a) => quant::quantize(a, cfg, mode),
            Self::Encode(a) => quant::encode(a, cfg, mode),
            Self::Infer(a) => run::infer(a, cfg, mode),
            Self::Simulate(a) => run::simulate(a, cfg, mode),
            Self::Report(a) => run::report(a, cfg),
        }
    }
}

/// Float spec and parameters of a model; quantized models are dequantized.
fn float_view(m: &LoadedModel) -> Result<(ModelSpec, ModelParams)> {
    Ok(match &m.model {
        Model::Float { spec, params } => (spec.clone(), params.clone()),
        Model::Quantized(q) => (q.spec.clone(), dequantize_model(q)?),
    })
}

/// Quantized form of a model, quantizing float models with `n` terms.
fn quantized_view(
    m: &LoadedModel,
    cfg: &RunConfig,
    n: usize,
    mode: ExecMode,
) -> Result<QuantizedModel> {
    Ok(match &m.model {
        Model::Float { spec, params } => {
            let (fs, fp) = fold_model(spec, params)?;
            shift_quantize_model(&fs, &fp, &cfg.quant.quant_config(n)?, mode)?
        }
        Model::Quantized(q) => q.clone(),
    })
}

fn normalized(samples: &[Sample], norm: &Normalizer) -> Vec<Sample> {
    norm.apply_all(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
    /// Raw integer logits when produced by the shift engine.
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineEval {
    pub accuracy: f64,
    pub saturations: usize,
    pub predictions: Vec<Prediction>,
}

/// Runs the integer engine over standardized samples.
fn engine_eval(engine: &ShiftEngine, samples: &[Sample], mode: ExecMode) -> Result<EngineEval> {
    let outs = par::map_indexed(mode, samples, |_, s| engine.forward(&s.frame));
    let mut predictions = Vec::with_capacity(samples.len());
    let mut saturations = 0;
    for (s, out) in samples.iter().zip(outs) {
        let out = out?;
        saturations += out.total_saturations();
        predictions.push(Prediction {
            id: s.id.clone(),
            label: s.label,
            predicted: out.class,
            logits: out.logits.iter().map(|&v| v as f64).collect(),
        });
    }
    Ok(EngineEval {
        accuracy: hit_rate(&predictions),
        saturations,
        predictions,
    })
}

fn float_predictions(
    spec: &ModelSpec,
    params: &ModelParams,
    samples: &[Sample],
    mode: ExecMode,
) -> Result<Vec<Prediction>> {
    let frames: Vec<_> = samples.iter().map(|s| s.frame.clone()).collect();
    let logits = shiftadd_core::nn::forward_batch(spec, params, &frames, mode)?;
    Ok(samples
        .iter()
        .zip(logits)
        .map(|(s, l)| Prediction {
            id: s.id.clone(),
            label: s.label,
            predicted: argmax(&l),
            logits: l,
        })
        .collect())
}

fn hit_rate(p: &[Prediction]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    p.iter().filter(|p| p.predicted == p.label).count() as f64 / p.len() as f64
}
