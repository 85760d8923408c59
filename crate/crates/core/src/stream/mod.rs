//! Row-major streaming simulation with line buffers, and throughput
//! arithmetic.

pub mod datapath;
pub mod line_buffer;
pub mod pipeline;
pub mod throughput;

pub use datapath::{Datapath, FloatDatapath, IntDatapath};
pub use line_buffer::{buffer_requirement, BufferRequirement, LineBuffer, WindowGeometry};
pub use pipeline::{stream_frame, StageReport, StreamOutput, StreamSession};
pub use throughput::{throughput_report, Rounding, ThroughputReport};

use crate::engine::{LayerSaturation, ShiftEngine};
use crate::error::Result;
use crate::nn::{ModelParams, ModelSpec};
use crate::tensor::Tensor;

/// Streams a float frame through the reference arithmetic.
pub fn stream_model_forward(
    spec: &ModelSpec,
    params: &ModelParams,
    frame: &Tensor,
) -> Result<StreamOutput<f64>> {
    params.validate(spec)?;
    let mut dp = FloatDatapath { spec, params };
    stream_frame(spec, &mut dp, frame.shape(), frame.data())
}

/// Streams a frame through the shift-add engine. Saturation counts are
/// returned per layer alongside the output.
pub fn stream_quantized_forward(
    engine: &ShiftEngine,
    spec: &ModelSpec,
    frame: &Tensor,
) -> Result<(StreamOutput<i32>, Vec<LayerSaturation>)> {
    let input = engine.quantize_input(frame)?;
    let mut dp = IntDatapath::new(engine);
    let out = stream_frame(spec, &mut dp, input.shape, &input.data)?;
    let sats = engine
        .layers
        .iter()
        .zip(&dp.saturations)
        .map(|(l, &count)| LayerSaturation {
            layer: l.name().to_string(),
            count,
        })
        .collect();
    Ok((out, sats))
}
