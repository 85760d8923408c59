//! `SACW` weight files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "SACW" | u16 version = 1 | u16 layer count
//! per layer:
//!   u8 kind tag | u16 M | u16 N | u16 P | u16 Q | u16 S | u16 pad
//!   conv:  f32 kernel [M][N][P][Q] | f32 bias [M]
//!          then, if the batchnorm flag is set: f32 gamma[M] | beta[M] | mean[M] | var[M] | f32 eps
//!   dense: f32 weights [M][N] | f32 bias [M]            (P = Q = S = 1, pad = 0)
//!   pool:  no payload                                    (M = N = channels, P x Q window)
//!   flatten: no payload                                  (M = flattened length, N = channels)
//! ```
//!
//! The kind tag keeps the layer kind in its low nibble (1 conv, 2 max pool,
//! 3 avg pool, 4 flatten, 5 dense); bit 6 marks a ReLU and bit 7 a batchnorm.
//! Input rows and columns are not stored and must be supplied when reading.

use super::layers::{BatchNormParams, ConvLayerParams, DenseParams, PoolMode, PoolSpec};
use super::model::{LayerParams, ModelParams};
use super::spec::{ConvSpec, LayerKind, LayerSpec, ModelSpec};
use crate::binio::{u16_field, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::tensor::Shape;

pub const SACW_MAGIC: &[u8; 4] = b"SACW";
pub const SACW_VERSION: u16 = 1;

pub(crate) const TAG_CONV: u8 = 1;
pub(crate) const TAG_MAXPOOL: u8 = 2;
pub(crate) const TAG_AVGPOOL: u8 = 3;
pub(crate) const TAG_FLATTEN: u8 = 4;
pub(crate) const TAG_DENSE: u8 = 5;
pub(crate) const FLAG_RELU: u8 = 0x40;
pub(crate) const FLAG_BATCHNORM: u8 = 0x80;

/// Kind tag and `[M, N, P, Q, S, pad]` of a layer.
pub(crate) fn layer_header(
    layer: &LayerSpec,
    input: Shape,
    output: Shape,
) -> Result<(u8, [u16; 6])> {
    let f = |v: usize| u16_field(v, &layer.name);
    Ok(match &layer.kind {
        LayerKind::Conv(c) => {
            let mut tag = TAG_CONV;
            if c.relu {
                tag |= FLAG_RELU;
            }
            if c.batchnorm {
                tag |= FLAG_BATCHNORM;
            }
            (
                tag,
                [
                    f(c.out_channels)?,
                    f(input.channels)?,
                    f(c.kernel.0)?,
                    f(c.kernel.1)?,
                    f(c.stride)?,
                    f(c.padding)?,
                ],
            )
        }
        LayerKind::Pool(p) => {
            let tag = match p.mode {
                PoolMode::Max => TAG_MAXPOOL,
                PoolMode::Avg => TAG_AVGPOOL,
            };
            (
                tag,
                [
                    f(input.channels)?,
                    f(input.channels)?,
                    f(p.window.0)?,
                    f(p.window.1)?,
                    f(p.stride)?,
                    0,
                ],
            )
        }
        LayerKind::Flatten => (
            TAG_FLATTEN,
            [f(output.len())?, f(input.channels)?, 1, 1, 1, 0],
        ),
        LayerKind::Dense { outputs } => (TAG_DENSE, [f(*outputs)?, f(input.len())?, 1, 1, 1, 0]),
    })
}

/// Rebuilds layer specs from headers, naming layers by kind and ordinal.
pub(crate) struct SpecBuilder {
    counts: [usize; 6],
    pub layers: Vec<LayerSpec>,
    pub first_channels: Option<usize>,
}

impl SpecBuilder {
    pub fn new() -> Self {
        Self {
            counts: [0; 6],
            layers: Vec::new(),
            first_channels: None,
        }
    }

    pub fn push(&mut self, tag: u8, h: [u16; 6]) -> Result<()> {
        let kind = tag & 0x0f;
        let [m, n, p, q, s, pad] = h.map(usize::from);
        if self.first_channels.is_none() {
            self.first_channels = Some(n);
        }
        let prefix = match kind {
            TAG_CONV => "conv",
            TAG_MAXPOOL => "maxpool",
            TAG_AVGPOOL => "avgpool",
            TAG_FLATTEN => "flatten",
            TAG_DENSE => "fc",
            other => return Err(Error::Format(format!("unknown layer kind tag {other}"))),
        };
        self.counts[kind as usize] += 1;
        let name = if kind == TAG_FLATTEN && self.counts[kind as usize] == 1 {
            prefix.to_string()
        } else {
            format!("{prefix}{}", self.counts[kind as usize])
        };
        let kind = match kind {
            TAG_CONV => LayerKind::Conv(ConvSpec {
                out_channels: m,
                kernel: (p, q),
                stride: s,
                padding: pad,
                relu: tag & FLAG_RELU != 0,
                batchnorm: tag & FLAG_BATCHNORM != 0,
            }),
            TAG_MAXPOOL | TAG_AVGPOOL => LayerKind::Pool(PoolSpec {
                mode: if kind == TAG_MAXPOOL {
                    PoolMode::Max
                } else {
                    PoolMode::Avg
                },
                window: (p, q),
                stride: s,
            }),
            TAG_FLATTEN => LayerKind::Flatten,
            _ => LayerKind::Dense { outputs: m },
        };
        self.layers.push(LayerSpec { name, kind });
        Ok(())
    }

    pub fn finish(self, rows: usize, cols: usize) -> Result<ModelSpec> {
        let channels = self
            .first_channels
            .ok_or_else(|| Error::Format("model has no layers".into()))?;
        let mut spec = ModelSpec {
            input: Shape::new(channels, rows, cols),
            layers: self.layers,
            class_count: 0,
        };
        let shapes = spec
            .layer_shapes()
            .map_err(|e| Error::Format(format!("stored layers do not compose: {e}")))?;
        spec.class_count = shapes.last().map(Shape::len).unwrap_or(0);
        Ok(spec)
    }
}

pub fn write_sacw(spec: &ModelSpec, params: &ModelParams) -> Result<Vec<u8>> {
    params.validate(spec)?;
    let shapes = spec.shapes()?;
    let mut w = ByteWriter::default();
    w.bytes(SACW_MAGIC);
    w.u16(SACW_VERSION);
    w.u16(u16_field(spec.layers.len(), "layer count")?);
    for (i, (layer, lp)) in spec.layers.iter().zip(&params.layers).enumerate() {
        let (tag, h) = layer_header(layer, shapes[i], shapes[i + 1])?;
        w.u8(tag);
        h.iter().for_each(|v| w.u16(*v));
        match lp {
            LayerParams::Conv { conv, bn } => {
                conv.kernel
                    .iter()
                    .chain(&conv.bias)
                    .for_each(|v| w.f32(*v as f32));
                if let Some(bn) = bn {
                    for v in bn
                        .gamma
                        .iter()
                        .chain(&bn.beta)
                        .chain(&bn.mean)
                        .chain(&bn.var)
                    {
                        w.f32(*v as f32);
                    }
                    w.f32(bn.eps as f32);
                }
            }
            LayerParams::Dense(d) => d
                .weights
                .iter()
                .chain(&d.bias)
                .for_each(|v| w.f32(*v as f32)),
            LayerParams::Stateless => {}
        }
    }
    Ok(w.buf)
}

fn read_f32s(r: &mut ByteReader<'_>, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| r.f32().map(f64::from)).collect()
}

pub(crate) fn read_header(r: &mut ByteReader<'_>) -> Result<(u8, [u16; 6])> {
    let tag = r.u8()?;
    let mut h = [0u16; 6];
    for v in &mut h {
        *v = r.u16()?;
    }
    Ok((tag, h))
}

/// Parses a `SACW` file for a model whose input frames are `rows x cols`.
pub fn read_sacw(bytes: &[u8], rows: usize, cols: usize) -> Result<(ModelSpec, ModelParams)> {
    let mut r = ByteReader::new(bytes, "SACW");
    r.magic(SACW_MAGIC)?;
    let version = r.u16()?;
    if version != SACW_VERSION {
        return Err(Error::Format(format!("unsupported SACW version {version}")));
    }
    let count = r.u16()? as usize;
    let mut builder = SpecBuilder::new();
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let (tag, h) = read_header(&mut r)?;
        let [m, n, p, q, s, pad] = h.map(usize::from);
        builder.push(tag, h)?;
        let lp = match tag & 0x0f {
            TAG_CONV => {
                let mut conv = ConvLayerParams::zeros(m, n, (p, q), s, pad);
                conv.kernel = read_f32s(&mut r, conv.weight_count())?;
                conv.bias = read_f32s(&mut r, m)?;
                let bn = if tag & FLAG_BATCHNORM != 0 {
                    Some(BatchNormParams {
                        gamma: read_f32s(&mut r, m)?,
                        beta: read_f32s(&mut r, m)?,
                        mean: read_f32s(&mut r, m)?,
                        var: read_f32s(&mut r, m)?,
                        eps: f64::from(r.f32()?),
                    })
                } else {
                    None
                };
                LayerParams::Conv { conv, bn }
            }
            TAG_DENSE => LayerParams::Dense(DenseParams {
                outputs: m,
                inputs: n,
                weights: read_f32s(&mut r, m * n)?,
                bias: read_f32s(&mut r, m)?,
            }),
            _ => LayerParams::Stateless,
        };
        layers.push(lp);
    }
    r.finish()?;
    let spec = builder.finish(rows, cols)?;
    let params = ModelParams { layers };
    params
        .validate(&spec)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((spec, params))
}
