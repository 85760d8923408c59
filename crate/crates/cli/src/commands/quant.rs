use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use shiftadd_core::data::Sample;
use shiftadd_core::engine::ShiftEngine;
use shiftadd_core::nn::{fold_model, LayerParams, ModelParams, ModelSpec};
use shiftadd_core::par::ExecMode;
use shiftadd_core::quant::{
    compression_report, dequantize_model, encode_model, shift_quantize_model, CompressionReport,
    QuantizedModel,
};
use shiftadd_core::train::accuracy;
use shiftadd_core::Error;

use super::{engine_eval, normalized, quantized_view};
use crate::artifacts::{load_dataset, load_model, save_quantized, LoadedModel, Model};
use crate::config::RunConfig;

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Float (SACW) model.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Dataset for the accuracy sweep; without it only the model is written.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Terms per weight in the written model.
    #[arg(long)]
    n: Option<usize>,
    /// Largest term count in the sweep.
    #[arg(long, default_value_t = 10)]
    n_max: usize,
    /// Also encode the written model with this many bits per shift.
    #[arg(long)]
    bits: Option<u8>,
    /// Defaults to `<out>/model.saqm`.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ErrorStats {
    mean_abs: f64,
    max_abs: f64,
}

#[derive(Debug, Serialize)]
struct QuantRow {
    n: usize,
    accuracy: f64,
    engine_accuracy: f64,
    saturations: usize,
    weight_error: ErrorStats,
}

#[derive(Debug, Serialize)]
struct QuantizeResult {
    float_accuracy: Option<f64>,
    sweep: Vec<QuantRow>,
    n: usize,
    bits: Option<u8>,
    output: PathBuf,
    clamp_count: usize,
    compression: Option<CompressionReport>,
}

fn flat_values(p: &ModelParams) -> Vec<f64> {
    let mut out = Vec::new();
    for l in &p.layers {
        match l {
            LayerParams::Conv { conv, .. } => out.extend(conv.kernel.iter().chain(&conv.bias)),
            LayerParams::Dense(d) => out.extend(d.weights.iter().chain(&d.bias)),
            LayerParams::Stateless => {}
        }
    }
    out
}

fn weight_error(reference: &ModelParams, q: &QuantizedModel) -> Result<ErrorStats> {
    let (a, b) = (flat_values(reference), flat_values(&dequantize_model(q)?));
    let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect();
    let mean_abs = diffs.iter().sum::<f64>() / diffs.len().max(1) as f64;
    Ok(ErrorStats {
        mean_abs,
        max_abs: diffs.iter().copied().fold(0.0, f64::max),
    })
}

struct Scored {
    accuracy: f64,
    engine_accuracy: f64,
    saturations: usize,
}

fn score(
    q: &QuantizedModel,
    samples: &[Sample],
    cfg: &RunConfig,
    mode: ExecMode,
) -> Result<Scored> {
    let accuracy = accuracy(&q.spec, &dequantize_model(q)?, samples, mode)?;
    let eval = engine_eval(&ShiftEngine::new(q, cfg.engine)?, samples, mode)?;
    Ok(Scored {
        accuracy,
        engine_accuracy: eval.accuracy,
        saturations: eval.saturations,
    })
}

fn float_parts(m: &LoadedModel) -> Result<(ModelSpec, ModelParams)> {
    let Model::Float { spec, params } = &m.model else {
        return Err(Error::Config(format!("quantize expects a float (SACW) model")).into());
    };
    Ok(fold_model(spec, params)?)
}

pub fn quantize(a: &QuantizeArgs, cfg: &mut RunConfig, mode: ExecMode) -> Result<()> {
    if let Some(n) = a.n {
        cfg.quant.n = n;
    }
    if let Some(b) = a.bits {
        cfg.quant.bits = b;
    }
    let m = load_model(&a.model)?;
    let (spec, params) = float_parts(&m)?;
    let samples = match &a.data {
        Some(p) => Some(normalized(
            &load_dataset(p, spec.input)?.samples,
            &m.meta.normalizer,
        )),
        None => None,
    };
    let mut sweep = Vec::new();
    let mut float_accuracy = None;
    if let Some(samples) = &samples {
        let fa = accuracy(&spec, &params, samples, mode)?;
        println!("float accuracy {fa:.4}");
        float_accuracy = Some(fa);
        for n in 1..=a.n_max {
            let q = shift_quantize_model(&spec, &params, &cfg.quant.quant_config(n)?, mode)?;
            let s = score(&q, samples, cfg, mode)?;
            let err = weight_error(&params, &q)?;
            println!(
                "N={n:<2} accuracy {:.4} engine {:.4} mean |dw| {:.3e} saturations {}",
                s.accuracy, s.engine_accuracy, err.mean_abs, s.saturations
            );
            sweep.push(QuantRow {
                n,
                accuracy: s.accuracy,
                engine_accuracy: s.engine_accuracy,
                saturations: s.saturations,
                weight_error: err,
            });
        }
    }
    let mut q = shift_quantize_model(&spec, &params, &cfg.quant.quant_config(cfg.quant.n)?, mode)?;
    let mut compression = None;
    if let Some(b) = a.bits {
        q = encode_model(&q, b)?;
        let c = compression_report(&spec, cfg.quant.n as u32, b as u32)?;
        println!(
            "N={} bits={} stores {}% of float32",
            cfg.quant.n, b, c.ratio_percent
        );
        compression = Some(c);
    }
    let output = a
        .output
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("model.saqm"));
    save_quantized(&output, &q, m.meta.normalizer)?;
    println!("model {}", output.display());
    let res = QuantizeResult {
        float_accuracy,
        sweep,
        n: cfg.quant.n,
        bits: a.bits,
        output,
        clamp_count: q.clamp_count(),
        compression,
    };
    crate::artifacts::write_result(cfg, "quantize", &res)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Quantized (SAQM) model, or a float model quantized on the fly with
    /// the configured term count.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Bits per shift in the written model.
    #[arg(long)]
    bits: Option<u8>,
    /// Largest bit width in the sweep.
    #[arg(long, default_value_t = 8)]
    bits_max: u8,
    /// Terms per weight when quantizing a float model.
    #[arg(long)]
    n: Option<usize>,
    /// Defaults to `<out>/model-encoded.saqm`.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EncodeRow {
    bits: u8,
    clamp_count: usize,
    lossless: bool,
    accuracy: Option<f64>,
    engine_accuracy: Option<f64>,
    saturations: Option<usize>,
    ratio_percent: f64,
}

#[derive(Debug, Serialize)]
struct EncodeResult {
    n: usize,
    unencoded_accuracy: Option<f64>,
    sweep: Vec<EncodeRow>,
    bits: u8,
    output: PathBuf,
    compression: CompressionReport,
}

pub fn encode(a: &EncodeArgs, cfg: &mut RunConfig, mode: ExecMode) -> Result<()> {
    if let Some(b) = a.bits {
        cfg.quant.bits = b;
    }
    if let Some(n) = a.n {
        cfg.quant.n = n;
    }
    let m = load_model(&a.model)?;
    let q = quantized_view(&m, cfg, cfg.quant.n, mode)?;
    let n = q.config.n;
    let samples = match &a.data {
        Some(p) => Some(normalized(
            &load_dataset(p, q.spec.input)?.samples,
            &m.meta.normalizer,
        )),
        None => None,
    };
    let unencoded_accuracy = samples
        .as_ref()
        .map(|s| score(&q, s, cfg, mode))
        .transpose()?
        .map(|s| s.accuracy);
    let mut sweep = Vec::new();
    for bits in 1..=a.bits_max {
        let e = encode_model(&q, bits)?;
        let scored = samples
            .as_ref()
            .map(|s| score(&e, s, cfg, mode))
            .transpose()?;
        let row = EncodeRow {
            bits,
            clamp_count: e.clamp_count(),
            lossless: e.clamp_count() == 0,
            accuracy: scored.as_ref().map(|s| s.accuracy),
            engine_accuracy: scored.as_ref().map(|s| s.engine_accuracy),
            saturations: scored.as_ref().map(|s| s.saturations),
            ratio_percent: compression_report(&q.spec, n as u32, bits as u32)?.ratio_percent,
        };
        match (row.accuracy, row.engine_accuracy) {
            (Some(acc), Some(eng)) => {
                println!(
                    "bits={bits} clamped {} accuracy {acc:.4} engine {eng:.4}",
                    row.clamp_count
                )
            }
            _ => println!("bits={bits} clamped {}", row.clamp_count),
        }
        sweep.push(row);
    }
    let bits = cfg.quant.bits;
    let encoded = encode_model(&q, bits)?;
    let output = a
        .output
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("model-encoded.saqm"));
    save_quantized(&output, &encoded, m.meta.normalizer)?;
    let compression = compression_report(&q.spec, n as u32, bits as u32)?;
    println!(
        "N={n} bits={bits} stores {}% of float32",
        compression.ratio_percent
    );
    println!("model {}", output.display());
    let res = EncodeResult {
        n,
        unencoded_accuracy,
        sweep,
        bits,
        output,
        compression,
    };
    crate::artifacts::write_result(cfg, "encode", &res)?;
    Ok(())
}
