//! Multiplier-free integer inference.
//!
//! Activations are `i32` with `F_a` fraction bits. A weight with shift
//! magnitudes `k` contributes `act << (F + I - k)` per term, so products land
//! on the `F_a + F` grid of an `i64` accumulator. Biases are expanded to the
//! same grid with shifts. Each conv or dense output is brought back to `F_a`
//! by a round-half-to-even right shift of `F` bits and clamped to
//! `+-(2^31 - 1)`; clamps are counted per layer, or rejected in diagnostic
//! mode. Max pooling compares, average pooling adds and shifts.

pub mod ops;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, LayerKind, PoolMode, PoolSpec};
use crate::quant::{FixedPointFrame, QuantizedModel, ShiftQuantParam};
use crate::tensor::{Shape, Tensor};
use ops::{mean_shift, relu, saturate, shift_round_even, IntWeight};

pub use ops::ACT_MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaturationMode {
    /// Clamp and count.
    #[default]
    Release,
    /// Fail on the first clamp.
    Diagnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// `F_a`, fraction bits of activations.
    pub activation_bits: u32,
    pub saturation: SaturationMode,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            activation_bits: 8,
            saturation: SaturationMode::Release,
        }
    }
}

/// An activation on the `2^-F_a` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedActivation {
    pub value: i32,
    pub frac_bits: u32,
}

impl FixedActivation {
    pub fn to_f64(self) -> f64 {
        f64::from(self.value) / 2f64.powi(self.frac_bits as i32)
    }
}

/// `round_half_even(x * 2^F_a)`.
pub fn quantize_activation(x: f64, frac_bits: u32) -> Result<FixedActivation> {
    if frac_bits > 30 {
        return Err(Error::Config(format!(
            "activation fraction bits {frac_bits} > 30"
        )));
    }
    let scaled = (x * 2f64.powi(frac_bits as i32)).round_ties_even();
    if !scaled.is_finite() || scaled.abs() > ACT_MAX as f64 {
        return Err(Error::Range(format!(
            "activation {x} does not fit 32 bits at {frac_bits} fraction bits"
        )));
    }
    Ok(FixedActivation {
        value: scaled as i32,
        frac_bits,
    })
}

fn int_weight(q: &ShiftQuantParam, frame: FixedPointFrame) -> IntWeight {
    IntWeight {
        negative: q.sign < 0,
        lshifts: q
            .shifts
            .iter()
            .map(|&k| (frame.width() - u32::from(k)) as u8)
            .collect(),
    }
}

/// `sign * sum(act << (F + I - k))`: the activation times the weight's
/// fixed-point magnitude, without a multiplier. Result is on the
/// `act.frac_bits + F` grid.
pub fn shift_add_mul(act: FixedActivation, q: &ShiftQuantParam, frame: FixedPointFrame) -> i64 {
    int_weight(q, frame).apply(act.value)
}

/// A conv or dense layer in integer form. Dense layers are 1x1 convs over a
/// flattened `len x 1 x 1` input.
#[derive(Debug, Clone, PartialEq)]
pub struct IntConvLayer {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub relu: bool,
    /// `[M][N][P][Q]`.
    pub weights: Vec<IntWeight>,
    /// Biases on the accumulator grid.
    pub bias: Vec<i64>,
    /// Right shift from accumulator grid to activation grid (`F`).
    pub requant_shift: u32,
}

impl IntConvLayer {
    pub fn window_len(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    /// Output channel `m` for one window laid out `[N][P][Q]` (padding taps
    /// hold 0). Returns the requantized value and whether it was clamped.
    #[inline]
    pub fn output_at(&self, m: usize, window: &[i32]) -> (i32, bool) {
        let w = &self.weights[m * window.len()..(m + 1) * window.len()];
        let mut acc = 0i64;
        for (wt, &x) in w.iter().zip(window) {
            acc += wt.apply(x);
        }
        self.finish(m, acc)
    }

    /// Adds the bias to a finished weighted sum, requantizes, clamps and
    /// applies the activation.
    #[inline]
    pub fn finish(&self, m: usize, acc: i64) -> (i32, bool) {
        let (v, clamped) = saturate(shift_round_even(acc + self.bias[m], self.requant_shift));
        (if self.relu { relu(v) } else { v }, clamped)
    }

    /// Worst-case accumulator magnitude over all outputs given activations
    /// bounded by `ACT_MAX`.
    pub fn worst_case_accumulator(&self) -> u128 {
        let n = self.window_len();
        (0..self.out_channels)
            .map(|m| {
                let w: u128 = self.weights[m * n..(m + 1) * n]
                    .iter()
                    .map(|w| u128::from(w.magnitude()))
                    .sum();
                w * ACT_MAX as u128 + self.bias[m].unsigned_abs() as u128
            })
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntLayer {
    Conv(IntConvLayer),
    Pool {
        name: String,
        spec: PoolSpec,
        log2_len: u32,
    },
    Flatten {
        name: String,
    },
    Dense(IntConvLayer),
}

impl IntLayer {
    pub fn name(&self) -> &str {
        match self {
            Self::Conv(c) | Self::Dense(c) => &c.name,
            Self::Pool { name, .. } | Self::Flatten { name } => name,
        }
    }
}

/// Integer feature map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntTensor {
    pub shape: Shape,
    pub data: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSaturation {
    pub layer: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineOutput {
    /// Logits on the `2^-F_a` grid.
    pub logits: Vec<i32>,
    pub class: usize,
    pub saturations: Vec<LayerSaturation>,
}

impl EngineOutput {
    pub fn total_saturations(&self) -> usize {
        self.saturations.iter().map(|s| s.count).sum()
    }
}

/// Immutable integer model built from a [`QuantizedModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftEngine {
    pub input: Shape,
    pub layers: Vec<IntLayer>,
    pub config: EngineConfig,
    /// `log2` of the largest accumulator magnitude any layer can reach.
    pub accumulator_bits: f64,
}

impl ShiftEngine {
    pub fn new(q: &QuantizedModel, config: EngineConfig) -> Result<Self> {
        let frame = q.config.frame;
        frame.validate()?;
        if config.activation_bits > 30 {
            return Err(Error::Config(
                "activation fraction bits must be <= 30".into(),
            ));
        }
        // biases are placed on the F_a + F grid by shifting
        let bias_shift = config.activation_bits;
        if frame.width() + bias_shift > 62 {
            return Err(Error::Config("bias does not fit the accumulator".into()));
        }
        let shapes = q.spec.layer_shapes()?;
        let mut layers = Vec::with_capacity(q.spec.layers.len());
        let mut worst = 0u128;
        for (i, layer) in q.spec.layers.iter().enumerate() {
            let input = shapes[i];
            let quantized = || {
                q.layer(i).ok_or_else(|| {
                    Error::Config(format!("layer {} has no quantized weights", layer.name))
                })
            };
            let build = |ql: &crate::quant::QuantizedLayer,
                         out: usize,
                         inp: usize,
                         kernel: (usize, usize),
                         stride: usize,
                         padding: usize,
                         relu: bool|
             -> Result<IntConvLayer> {
                let expected = out * inp * kernel.0 * kernel.1;
                if ql.weights.len() != expected || ql.biases.len() != out {
                    return Err(Error::Config(format!(
                        "layer {}: quantized weight count mismatch",
                        layer.name
                    )));
                }
                for p in ql.params() {
                    p.validate(frame)?;
                }
                Ok(IntConvLayer {
                    name: layer.name.clone(),
                    out_channels: out,
                    in_channels: inp,
                    kernel,
                    stride,
                    padding,
                    relu,
                    weights: ql.weights.iter().map(|p| int_weight(p, frame)).collect(),
                    bias: ql
                        .biases
                        .iter()
                        .map(|p| int_weight(p, frame).apply(1) << bias_shift)
                        .collect(),
                    requant_shift: frame.fraction_bits,
                })
            };
            let int_layer = match &layer.kind {
                LayerKind::Conv(c) => {
                    if c.batchnorm {
                        return Err(Error::Config(format!(
                            "layer {}: fold batchnorm before building the engine",
                            layer.name
                        )));
                    }
                    IntLayer::Conv(build(
                        quantized()?,
                        c.out_channels,
                        input.channels,
                        c.kernel,
                        c.stride,
                        c.padding,
                        c.relu,
                    )?)
                }
                LayerKind::Dense { outputs } => IntLayer::Dense(build(
                    quantized()?,
                    *outputs,
                    input.len(),
                    (1, 1),
                    1,
                    0,
                    false,
                )?),
                LayerKind::Pool(p) => {
                    let len = p.window.0 * p.window.1;
                    if p.mode == PoolMode::Avg && !len.is_power_of_two() {
                        return Err(Error::Config(format!(
                            "layer {}: average window of {len} elements is not a power of two",
                            layer.name
                        )));
                    }
                    IntLayer::Pool {
                        name: layer.name.clone(),
                        spec: *p,
                        log2_len: len.trailing_zeros(),
                    }
                }
                LayerKind::Flatten => IntLayer::Flatten {
                    name: layer.name.clone(),
                },
            };
            if let IntLayer::Conv(c) | IntLayer::Dense(c) = &int_layer {
                worst = worst.max(c.worst_case_accumulator());
            }
            layers.push(int_layer);
        }
        if worst >= 1u128 << 63 {
            return Err(Error::Range(format!(
                "worst-case accumulator 2^{:.1} overflows 64 bits",
                (worst as f64).log2()
            )));
        }
        Ok(Self {
            input: q.spec.input,
            layers,
            config,
            accumulator_bits: (worst.max(1) as f64).log2(),
        })
    }

    pub fn quantize_input(&self, frame: &Tensor) -> Result<IntTensor> {
        if frame.shape() != self.input {
            return Err(Error::Config(format!(
                "frame shape {} does not match engine input {}",
                frame.shape(),
                self.input
            )));
        }
        let data = frame
            .data()
            .iter()
            .map(|&x| quantize_activation(x, self.config.activation_bits).map(|a| a.value))
            .collect::<Result<_>>()?;
        Ok(IntTensor {
            shape: frame.shape(),
            data,
        })
    }

    fn note(&self, layer: &str, clamped: usize, count: &mut usize) -> Result<()> {
        if clamped > 0 && self.config.saturation == SaturationMode::Diagnostic {
            return Err(Error::Saturation {
                layer: layer.to_string(),
                message: format!("{clamped} outputs clamped"),
            });
        }
        *count += clamped;
        Ok(())
    }

    /// Runs one integer layer on `x`.
    pub fn layer_forward(&self, layer: &IntLayer, x: &IntTensor) -> Result<(IntTensor, usize)> {
        let mut clamps = 0;
        let out = match layer {
            IntLayer::Conv(c) => conv_forward(c, x.shape, &x.data, &mut clamps)?,
            IntLayer::Dense(c) => {
                conv_forward(c, Shape::new(x.shape.len(), 1, 1), &x.data, &mut clamps)?
            }
            IntLayer::Pool { spec, log2_len, .. } => pool_forward(spec, *log2_len, x)?,
            IntLayer::Flatten { .. } => IntTensor {
                shape: Shape::new(x.shape.len(), 1, 1),
                data: x.data.clone(),
            },
        };
        let mut count = 0;
        self.note(layer.name(), clamps, &mut count)?;
        Ok((out, count))
    }

    pub fn forward_int(&self, input: IntTensor) -> Result<EngineOutput> {
        let mut x = input;
        let mut saturations = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, count) = self.layer_forward(layer, &x)?;
            saturations.push(LayerSaturation {
                layer: layer.name().to_string(),
                count,
            });
            x = y;
        }
        let class = argmax(&x.data);
        Ok(EngineOutput {
            logits: x.data,
            class,
            saturations,
        })
    }

    /// Conditions a float frame and runs the whole chain.
    pub fn forward(&self, frame: &Tensor) -> Result<EngineOutput> {
        self.forward_int(self.quantize_input(frame)?)
    }
}

/// Integer inference of one frame; builds the engine each call.
pub fn quantized_model_forward(
    q: &QuantizedModel,
    config: EngineConfig,
    frame: &Tensor,
) -> Result<EngineOutput> {
    ShiftEngine::new(q, config)?.forward(frame)
}

fn conv_forward(
    c: &IntConvLayer,
    shape: Shape,
    data: &[i32],
    clamps: &mut usize,
) -> Result<IntTensor> {
    if shape.channels != c.in_channels {
        return Err(Error::Config(format!(
            "layer {}: input has {} channels, expected {}",
            c.name, shape.channels, c.in_channels
        )));
    }
    let (p, q) = c.kernel;
    let rows = crate::nn::layers::conv_extent(shape.rows, p, c.stride, c.padding)?;
    let cols = crate::nn::layers::conv_extent(shape.cols, q, c.stride, c.padding)?;
    let out_shape = Shape::new(c.out_channels, rows, cols);
    let mut out = vec![0i32; out_shape.len()];
    let mut window = vec![0i32; c.window_len()];
    let plane = rows * cols;
    for x in 0..rows {
        for y in 0..cols {
            let mut w = 0;
            for n in 0..c.in_channels {
                for i in 0..p {
                    for j in 0..q {
                        let r = (x * c.stride + i) as isize - c.padding as isize;
                        let s = (y * c.stride + j) as isize - c.padding as isize;
                        window[w] = if r >= 0
                            && s >= 0
                            && (r as usize) < shape.rows
                            && (s as usize) < shape.cols
                        {
                            data[(n * shape.rows + r as usize) * shape.cols + s as usize]
                        } else {
                            0
                        };
                        w += 1;
                    }
                }
            }
            for m in 0..c.out_channels {
                let (v, clamped) = c.output_at(m, &window);
                *clamps += clamped as usize;
                out[m * plane + x * cols + y] = v;
            }
        }
    }
    Ok(IntTensor {
        shape: out_shape,
        data: out,
    })
}

/// Max or rounded-mean pooling of one window.
#[inline]
pub fn pool_window(mode: PoolMode, log2_len: u32, window: &[i32]) -> i32 {
    match mode {
        PoolMode::Max => window.iter().copied().fold(i32::MIN, i32::max),
        PoolMode::Avg => mean_shift(window.iter().map(|&v| i64::from(v)).sum(), log2_len),
    }
}

fn pool_forward(spec: &PoolSpec, log2_len: u32, x: &IntTensor) -> Result<IntTensor> {
    let out_shape = spec.output_shape(x.shape)?;
    let (p, q) = spec.window;
    let mut out = Vec::with_capacity(out_shape.len());
    let mut window = vec![0i32; p * q];
    for ch in 0..x.shape.channels {
        for r in 0..out_shape.rows {
            for c in 0..out_shape.cols {
                for i in 0..p {
                    for j in 0..q {
                        window[i * q + j] = x.data[(ch * x.shape.rows + r * spec.stride + i)
                            * x.shape.cols
                            + c * spec.stride
                            + j];
                    }
                }
                out.push(pool_window(spec.mode, log2_len, &window));
            }
        }
    }
    Ok(IntTensor {
        shape: out_shape,
        data: out,
    })
}
