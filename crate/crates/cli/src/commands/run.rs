use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use shiftadd_core::data::Sample;
use shiftadd_core::engine::{LayerSaturation, ShiftEngine};
use shiftadd_core::nn::{argmax, count_report, model_forward, CountReport};
use shiftadd_core::par::ExecMode;
use shiftadd_core::quant::{compression_report, CompressionReport};
use shiftadd_core::stream::throughput::{
    DEFAULT_CLOCK_HZ, DEFAULT_CYCLES, DEFAULT_FRAME_PERIOD_S, DEFAULT_FRAME_SPAN_M,
};
use shiftadd_core::stream::{
    stream_model_forward, stream_quantized_forward, throughput_report, Rounding, StageReport,
    ThroughputReport,
};
use shiftadd_core::Error;

use super::{
    engine_eval, float_predictions, float_view, hit_rate, normalized, quantized_view, Prediction,
};
use crate::artifacts::{load_dataset, load_model, write_result, LoadedModel, Model};
use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Arithmetic {
    /// Floating-point reference kernels.
    Float,
    /// Integer shift-add engine.
    Shift,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoundingArg {
    /// Inference time rounded to 0.001 ms first.
    #[value(alias = "paper")]
    Millis,
    Exact,
}

impl From<RoundingArg> for Rounding {
    fn from(r: RoundingArg) -> Self {
        match r {
            RoundingArg::Millis => Rounding::Millis,
            RoundingArg::Exact => Rounding::Exact,
        }
    }
}

fn default_arithmetic(m: &LoadedModel) -> Arithmetic {
    match m.model {
        Model::Float { .. } => Arithmetic::Float,
        Model::Quantized(_) => Arithmetic::Shift,
    }
}

fn select(samples: Vec<Sample>, id: Option<&str>) -> Result<Vec<Sample>> {
    match id {
        None => Ok(samples),
        Some(id) => {
            let hit: Vec<Sample> = samples.into_iter().filter(|s| s.id == id).collect();
            if hit.is_empty() {
                return Err(Error::Config(format!("no sample with id {id:?}")).into());
            }
            Ok(hit)
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Defaults to float for SACW models and shift for SAQM models.
    #[arg(long, value_enum)]
    engine: Option<Arithmetic>,
    /// Terms per weight when a float model runs on the shift engine.
    #[arg(long)]
    n: Option<usize>,
    /// Classify only this sample.
    #[arg(long)]
    sample: Option<String>,
}

#[derive(Debug, Serialize)]
struct InferResult {
    model: PathBuf,
    engine: Arithmetic,
    samples: usize,
    accuracy: f64,
    saturations: usize,
    predictions: Vec<Prediction>,
}

pub fn infer(a: &InferArgs, cfg: &mut RunConfig, mode: ExecMode) -> Result<()> {
    if let Some(n) = a.n {
        cfg.quant.n = n;
    }
    let m = load_model(&a.model)?;
    let engine = a.engine.unwrap_or_else(|| default_arithmetic(&m));
    let input = m.meta.input;
    let samples = select(load_dataset(&a.data, input)?.samples, a.sample.as_deref())?;
    let samples = normalized(&samples, &m.meta.normalizer);
    let (predictions, saturations) = match engine {
        Arithmetic::Float => {
            let (spec, params) = float_view(&m)?;
            (float_predictions(&spec, &params, &samples, mode)?, 0)
        }
        Arithmetic::Shift => {
            let q = quantized_view(&m, cfg, cfg.quant.n, mode)?;
            let e = engine_eval(&ShiftEngine::new(&q, cfg.engine)?, &samples, mode)?;
            (e.predictions, e.saturations)
        }
    };
    let accuracy = hit_rate(&predictions);
    if let [p] = predictions.as_slice() {
        println!("{}: class {} (label {})", p.id, p.predicted, p.label);
    }
    println!(
        "accuracy {accuracy:.4} over {} samples, {} saturations",
        predictions.len(),
        saturations
    );
    let res = InferResult {
        model: a.model.clone(),
        engine,
        samples: predictions.len(),
        accuracy,
        saturations,
        predictions,
    };
    write_result(cfg, "infer", &res)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Sample to stream; the first one by id when absent.
    #[arg(long)]
    sample: Option<String>,
    /// Defaults to float for SACW models and shift for SAQM models.
    #[arg(long, value_enum)]
    datapath: Option<Arithmetic>,
    #[arg(long)]
    n: Option<usize>,
    /// Clock used to turn modeled cycles into time.
    #[arg(long, default_value_t = DEFAULT_CLOCK_HZ / 1e6)]
    clock_mhz: f64,
    #[arg(long, value_enum, default_value = "millis")]
    rounding: RoundingArg,
}

#[derive(Debug, Serialize)]
struct SimulateResult {
    model: PathBuf,
    sample: String,
    label: usize,
    datapath: Arithmetic,
    stages: Vec<StageReport>,
    modeled_cycles: u64,
    stream_logits: Vec<f64>,
    stream_class: usize,
    batch_class: usize,
    /// Bit-identical logits for the shift datapath, within 1e-6 for float.
    matches_batch: bool,
    saturations: Vec<LayerSaturation>,
    throughput: ThroughputReport,
}

pub fn simulate(a: &SimulateArgs, cfg: &mut RunConfig, mode: ExecMode) -> Result<()> {
    if let Some(n) = a.n {
        cfg.quant.n = n;
    }
    let m = load_model(&a.model)?;
    let datapath = a.datapath.unwrap_or_else(|| default_arithmetic(&m));
    let samples = load_dataset(&a.data, m.meta.input)?.samples;
    let sample = match &a.sample {
        Some(id) => select(samples, Some(id))?.remove(0),
        None => samples.into_iter().next().context("dataset is empty")?,
    };
    let frame = m.meta.normalizer.apply(&sample.frame);
    let (stages, cycles, stream_logits, batch_logits, matches, saturations) = match datapath {
        Arithmetic::Float => {
            let (spec, params) = float_view(&m)?;
            let s = stream_model_forward(&spec, &params, &frame)?;
            let b = model_forward(&spec, &params, &frame)?;
            let ok = s.logits.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-6);
            (s.stages, s.modeled_cycles, s.logits, b, ok, Vec::new())
        }
        Arithmetic::Shift => {
            let q = quantized_view(&m, cfg, cfg.quant.n, mode)?;
            let engine = ShiftEngine::new(&q, cfg.engine)?;
            let (s, sats) = stream_quantized_forward(&engine, &q.spec, &frame)?;
            let b = engine.forward(&frame)?;
            let ok = s.logits == b.logits;
            let as_f64 = |v: &[i32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
            (
                s.stages,
                s.modeled_cycles,
                as_f64(&s.logits),
                as_f64(&b.logits),
                ok,
                sats,
            )
        }
    };
    let throughput = throughput_report(
        cycles as u64,
        a.clock_mhz * 1e6,
        DEFAULT_FRAME_PERIOD_S,
        DEFAULT_FRAME_SPAN_M,
        a.rounding.into(),
    )?;
    for st in &stages {
        println!(
            "{:<10} in {:>5} out {:>5} events {:>5} peak {:>4}{}",
            st.name,
            st.elements_in,
            st.elements_out,
            st.events,
            st.peak_occupancy,
            st.capacity.map(|c| format!("/{c}")).unwrap_or_default()
        );
    }
    let (stream_class, batch_class) = (argmax(&stream_logits), argmax(&batch_logits));
    println!(
        "{}: stream class {stream_class}, batch class {batch_class}, identical: {matches}",
        sample.id
    );
    println!(
        "modeled cycles {cycles}, {:.3} ms at {} MHz",
        throughput.inference_time_ms, a.clock_mhz
    );
    let res = SimulateResult {
        model: a.model.clone(),
        sample: sample.id,
        label: sample.label,
        datapath,
        stages,
        modeled_cycles: cycles as u64,
        stream_logits,
        stream_class,
        batch_class,
        matches_batch: matches,
        saturations,
        throughput,
    };
    write_result(cfg, "simulate", &res)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Take N and bits from this quantized model.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    bits: Option<u8>,
    #[arg(long, default_value_t = DEFAULT_CYCLES)]
    cycles: u64,
    #[arg(long, default_value_t = DEFAULT_CLOCK_HZ / 1e6)]
    clock_mhz: f64,
    /// Seconds of signal per frame.
    #[arg(long, default_value_t = DEFAULT_FRAME_PERIOD_S)]
    frame_period: f64,
    /// Metres of fiber per frame.
    #[arg(long, default_value_t = DEFAULT_FRAME_SPAN_M)]
    span: f64,
    #[arg(long, value_enum, default_value = "millis")]
    rounding: RoundingArg,
}

#[derive(Debug, Serialize)]
struct ParamCounts {
    without_batchnorm: CountReport,
    with_batchnorm: CountReport,
}

#[derive(Debug, Serialize)]
struct ReportResult {
    compression: CompressionReport,
    throughput: ThroughputReport,
    params: ParamCounts,
}

pub fn report(a: &ReportArgs, cfg: &mut RunConfig) -> Result<()> {
    if let Some(p) = &a.model {
        let m = load_model(p)?;
        let Model::Quantized(q) = &m.model else {
            return Err(Error::Config(format!("--model must be a quantized (SAQM) model")).into());
        };
        cfg.quant.n = q.config.n;
        if let Some(b) = q.bits {
            cfg.quant.bits = b;
        }
    }
    if let Some(n) = a.n {
        cfg.quant.n = n;
    }
    if let Some(b) = a.bits {
        cfg.quant.bits = b;
    }
    let spec = cfg.spec()?;
    let compression = compression_report(&spec, cfg.quant.n as u32, cfg.quant.bits as u32)?;
    let throughput = throughput_report(
        a.cycles,
        a.clock_mhz * 1e6,
        a.frame_period,
        a.span,
        a.rounding.into(),
    )?;
    let params = ParamCounts {
        without_batchnorm: count_report(&spec.clone().with_batchnorm(false))?,
        with_batchnorm: count_report(&spec.with_batchnorm(true))?,
    };
    println!(
        "compression: N={} bits={} -> {}% of float32",
        compression.n, compression.bits, compression.ratio_percent
    );
    println!(
        "inference time: {:.3} ms ({} cycles at {} MHz)",
        throughput.inference_time_ms, a.cycles, a.clock_mhz
    );
    println!("frames per period: {}", throughput.frames_per_period);
    println!("real-time fiber: {} m", throughput.realtime_fiber_m);
    println!(
        "parameters: {} without batchnorm, {} with batchnorm",
        params.without_batchnorm.param_count, params.with_batchnorm.param_count
    );
    write_result(
        cfg,
        "report",
        &ReportResult {
            compression,
            throughput,
            params,
        },
    )?;
    Ok(())
}
