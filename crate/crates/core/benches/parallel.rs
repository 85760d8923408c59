use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use shiftadd_core::engine::{EngineConfig, ShiftEngine};
use shiftadd_core::nn::{fold_model, forward_batch, ModelParams, ModelSpec};
use shiftadd_core::par::{self, ExecMode};
use shiftadd_core::quant::{shift_quantize_model, QuantConfig};
use shiftadd_core::train::{backward_gradients, GradSample};
use shiftadd_core::{rng, Tensor};

const MODES: [(&str, ExecMode); 2] = [
    ("sequential", ExecMode::Sequential),
    ("parallel", ExecMode::Parallel),
];

fn frames(spec: &ModelSpec, n: usize) -> Vec<Tensor> {
    let mut r = rng::stream(11, "bench");
    (0..n)
        .map(|_| {
            Tensor::new(
                spec.input,
                (0..spec.input.len())
                    .map(|_| r.gen_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap()
        })
        .collect()
}

fn bench_modes(c: &mut Criterion) {
    let spec = ModelSpec::student();
    let params = ModelParams::init(&spec, &mut rng::stream(1, "init")).unwrap();
    let batch = frames(&spec, 32);

    let mut g = c.benchmark_group("forward_batch");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &m| {
            b.iter(|| forward_batch(&spec, &params, &batch, m).unwrap())
        });
    }
    g.finish();

    let samples: Vec<GradSample> = batch
        .iter()
        .enumerate()
        .map(|(i, f)| GradSample {
            id: "b",
            frame: f,
            label: i % 3,
            teacher: None,
        })
        .collect();
    let mut g = c.benchmark_group("backward_gradients");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &m| {
            b.iter(|| backward_gradients(&spec, &params, &samples, None, m).unwrap())
        });
    }
    g.finish();

    let (fs, fp) = fold_model(&spec, &params).unwrap();
    let q = shift_quantize_model(&fs, &fp, &QuantConfig::new(3), ExecMode::Sequential).unwrap();
    let engine = ShiftEngine::new(&q, EngineConfig::default()).unwrap();
    let mut g = c.benchmark_group("shift_engine_batch");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &m| {
            b.iter(|| par::map_indexed(m, &batch, |_, f| engine.forward(f).unwrap().class))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_modes);
criterion_main!(benches);
