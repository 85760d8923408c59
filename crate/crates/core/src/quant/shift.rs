use serde::{Deserialize, Serialize};

use super::encode::LayerEncoding;
use super::fixed::{fixed_point_decompose, FixedPointFrame};
use crate::error::{Error, Result};
use crate::nn::{DenseParams, LayerKind, LayerParams, ModelParams, ModelSpec};
use crate::par::{self, ExecMode};

/// A weight as a signed sum of powers of two.
///
/// `shifts` holds magnitudes `k = I - e` for the terms `2^e`, so a term is
/// worth `2^(I - k)` and `k` runs over `1..=F+I`, most significant term
/// first. After lossy encoding repeated magnitudes may appear (a clamped
/// term collapses onto the top code), so order is only non-decreasing then.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftQuantParam {
    pub sign: i8,
    pub shifts: Vec<u8>,
}

impl ShiftQuantParam {
    pub const ZERO: Self = Self {
        sign: 0,
        shifts: Vec::new(),
    };

    /// Magnitude on the `2^-F` grid: `sum 2^(F+I-k)`.
    pub fn fixed_magnitude(&self, frame: FixedPointFrame) -> u64 {
        self.shifts
            .iter()
            .map(|&k| 1u64 << (frame.width() - u32::from(k)))
            .sum()
    }

    /// Exact real value `sign * sum 2^(I-k)`.
    pub fn value(&self, frame: FixedPointFrame) -> f64 {
        let m: f64 = self
            .shifts
            .iter()
            .map(|&k| 2f64.powi(frame.integer_bits as i32 - i32::from(k)))
            .sum();
        f64::from(self.sign) * m
    }

    pub fn validate(&self, frame: FixedPointFrame) -> Result<()> {
        if (self.sign == 0) != self.shifts.is_empty() || !(-1..=1).contains(&self.sign) {
            return Err(Error::Format(format!(
                "inconsistent sign {} for {} terms",
                self.sign,
                self.shifts.len()
            )));
        }
        if self
            .shifts
            .iter()
            .any(|&k| k == 0 || u32::from(k) > frame.width())
        {
            return Err(Error::Format(format!(
                "shift magnitudes {:?} outside 1..={}",
                self.shifts,
                frame.width()
            )));
        }
        if self.shifts.windows(2).any(|p| p[0] > p[1]) {
            return Err(Error::Format(format!(
                "shift magnitudes {:?} out of order",
                self.shifts
            )));
        }
        Ok(())
    }
}

/// Keeps the `n` most significant terms of the fixed-point expansion of `w`.
pub fn shift_quantize_param(w: f64, n: usize, frame: FixedPointFrame) -> Result<ShiftQuantParam> {
    if n == 0 {
        return Err(Error::Config("need at least one shift term".into()));
    }
    let exps = fixed_point_decompose(w, frame)?;
    let i = frame.integer_bits as i32;
    let shifts: Vec<u8> = exps.iter().take(n).map(|&e| (i - e) as u8).collect();
    let sign = if shifts.is_empty() {
        0
    } else if w < 0.0 {
        -1
    } else {
        1
    };
    Ok(ShiftQuantParam { sign, shifts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    /// Terms kept per weight.
    pub n: usize,
    pub frame: FixedPointFrame,
    /// When false, biases keep every term of their fixed-point value.
    pub quantize_biases: bool,
}

impl QuantConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            frame: FixedPointFrame::default(),
            quantize_biases: true,
        }
    }
}

/// Quantized conv or dense layer. `weights` follow the float layout
/// (`[M][N][P][Q]` or `[out][in]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedLayer {
    /// Index into the spec's layer list.
    pub layer: usize,
    pub name: String,
    pub weights: Vec<ShiftQuantParam>,
    pub biases: Vec<ShiftQuantParam>,
    pub encoding: Option<LayerEncoding>,
}

impl QuantizedLayer {
    pub fn params(&self) -> impl Iterator<Item = &ShiftQuantParam> {
        self.weights.iter().chain(&self.biases)
    }

    /// Every stored shift magnitude, weights first, in storage order.
    pub fn magnitudes(&self) -> Vec<u8> {
        self.params()
            .flat_map(|p| p.shifts.iter().copied())
            .collect()
    }

    pub fn clamp_count(&self) -> usize {
        self.encoding.as_ref().map_or(0, |e| e.clamp_count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    /// Batchnorm-free spec the layers refer to.
    pub spec: ModelSpec,
    pub config: QuantConfig,
    /// Encoding width once [`super::encode_model`] has run.
    pub bits: Option<u8>,
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedModel {
    pub fn layer(&self, spec_index: usize) -> Option<&QuantizedLayer> {
        self.layers.iter().find(|l| l.layer == spec_index)
    }

    pub fn clamp_count(&self) -> usize {
        self.layers.iter().map(QuantizedLayer::clamp_count).sum()
    }
}

fn quantize_slice(
    values: &[f64],
    n: usize,
    frame: FixedPointFrame,
    layer: &str,
    what: &str,
) -> Result<Vec<ShiftQuantParam>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            shift_quantize_param(w, n, frame).map_err(|e| match e {
                Error::Range(m) => Error::Range(format!("layer {layer} {what}[{i}]: {m}")),
                other => other,
            })
        })
        .collect()
}

/// Quantizes every conv and dense weight and bias with one shared
/// configuration. The spec must already be free of batchnorm.
pub fn shift_quantize_model(
    spec: &ModelSpec,
    params: &ModelParams,
    cfg: &QuantConfig,
    mode: ExecMode,
) -> Result<QuantizedModel> {
    cfg.frame.validate()?;
    params.validate(spec)?;
    if spec
        .layers
        .iter()
        .any(|l| matches!(&l.kind, LayerKind::Conv(c) if c.batchnorm))
    {
        return Err(Error::Config(
            "fold batchnorm into the convolutions before quantizing".into(),
        ));
    }
    let bias_n = if cfg.quantize_biases {
        cfg.n
    } else {
        cfg.frame.width() as usize
    };
    let work: Vec<(usize, &str, &[f64], &[f64])> = spec
        .layers
        .iter()
        .zip(&params.layers)
        .enumerate()
        .filter_map(|(i, (l, p))| match p {
            LayerParams::Conv { conv, .. } => Some((
                i,
                l.name.as_str(),
                conv.kernel.as_slice(),
                conv.bias.as_slice(),
            )),
            LayerParams::Dense(DenseParams { weights, bias, .. }) => {
                Some((i, l.name.as_str(), weights.as_slice(), bias.as_slice()))
            }
            LayerParams::Stateless => None,
        })
        .collect();
    let layers = par::map_indexed(mode, &work, |_, &(i, name, w, b)| {
        Ok(QuantizedLayer {
            layer: i,
            name: name.to_string(),
            weights: quantize_slice(w, cfg.n, cfg.frame, name, "weight")?,
            biases: quantize_slice(b, bias_n, cfg.frame, name, "bias")?,
            encoding: None,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedModel {
        spec: spec.clone(),
        config: *cfg,
        bits: None,
        layers,
    })
}

/// Float parameters equal to the quantized values (exact in binary).
pub fn dequantize_model(q: &QuantizedModel) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(&q.spec)?;
    let frame = q.config.frame;
    for ql in &q.layers {
        let (w, b) = match params.layers.get_mut(ql.layer) {
            Some(LayerParams::Conv { conv, .. }) => (&mut conv.kernel, &mut conv.bias),
            Some(LayerParams::Dense(d)) => (&mut d.weights, &mut d.bias),
            _ => return Err(Error::Config(format!("layer {} has no weights", ql.name))),
        };
        if w.len() != ql.weights.len() || b.len() != ql.biases.len() {
            return Err(Error::Config(format!(
                "layer {}: parameter count mismatch",
                ql.name
            )));
        }
        w.iter_mut()
            .zip(&ql.weights)
            .for_each(|(x, p)| *x = p.value(frame));
        b.iter_mut()
            .zip(&ql.biases)
            .for_each(|(x, p)| *x = p.value(frame));
    }
    Ok(params)
}
