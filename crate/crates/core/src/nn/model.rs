use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    conv2d_forward, dense_forward, fold_batchnorm, pool_with_argmax, relu_in_place,
    BatchNormParams, ConvLayerParams, DenseParams, PoolSpec,
};
use super::spec::{LayerKind, ModelSpec};
use crate::error::{config, Error, Result};
use crate::par::{self, ExecMode};
use crate::tensor::{Shape, Tensor};

/// Parameters of one layer, aligned with [`ModelSpec::layers`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Conv {
        conv: ConvLayerParams,
        bn: Option<BatchNormParams>,
    },
    Dense(DenseParams),
    Stateless,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| match &l.kind {
                LayerKind::Conv(c) => LayerParams::Conv {
                    conv: ConvLayerParams::zeros(
                        c.out_channels,
                        shapes[i].channels,
                        c.kernel,
                        c.stride,
                        c.padding,
                    ),
                    bn: c
                        .batchnorm
                        .then(|| BatchNormParams::identity(c.out_channels)),
                },
                LayerKind::Dense { outputs } => {
                    LayerParams::Dense(DenseParams::zeros(*outputs, shapes[i].len()))
                }
                LayerKind::Pool(_) | LayerKind::Flatten => LayerParams::Stateless,
            })
            .collect();
        Ok(Self { layers })
    }

    /// He-normal conv kernels, `N(0, 1/fan_in)` dense weights, zero biases,
    /// identity batchnorm.
    pub fn init<R: Rng>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(spec)?;
        for lp in &mut params.layers {
            match lp {
                LayerParams::Conv { conv, .. } => {
                    let fan_in = (conv.in_channels * conv.kernel_rows * conv.kernel_cols) as f64;
                    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
                    conv.kernel.iter_mut().for_each(|w| *w = normal.sample(rng));
                }
                LayerParams::Dense(d) => {
                    let normal = Normal::new(0.0, (1.0 / d.inputs as f64).sqrt()).unwrap();
                    d.weights.iter_mut().for_each(|w| *w = normal.sample(rng));
                }
                LayerParams::Stateless => {}
            }
        }
        Ok(params)
    }

    /// Checks every layer against `spec`.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let shapes = spec.shapes()?;
        if self.layers.len() != spec.layers.len() {
            return config(format!(
                "{} parameter blocks for {} layers",
                self.layers.len(),
                spec.layers.len()
            ));
        }
        for (i, (l, p)) in spec.layers.iter().zip(&self.layers).enumerate() {
            let ok = match (&l.kind, p) {
                (LayerKind::Conv(c), LayerParams::Conv { conv, bn }) => {
                    conv.validate()
                        .map_err(|e| Error::Config(format!("layer {}: {e}", l.name)))?;
                    if let Some(bn) = bn {
                        bn.validate()
                            .map_err(|e| Error::Config(format!("layer {}: {e}", l.name)))?;
                    }
                    conv.out_channels == c.out_channels
                        && conv.in_channels == shapes[i].channels
                        && (conv.kernel_rows, conv.kernel_cols) == c.kernel
                        && conv.stride == c.stride
                        && conv.padding == c.padding
                        && bn.is_some() == c.batchnorm
                        && bn.as_ref().is_none_or(|b| b.channels() == c.out_channels)
                }
                (LayerKind::Dense { outputs }, LayerParams::Dense(d)) => {
                    d.validate()
                        .map_err(|e| Error::Config(format!("layer {}: {e}", l.name)))?;
                    d.outputs == *outputs && d.inputs == shapes[i].len()
                }
                (LayerKind::Pool(_) | LayerKind::Flatten, LayerParams::Stateless) => true,
                _ => false,
            };
            if !ok {
                return config(format!("layer {}: parameters do not match spec", l.name));
            }
        }
        Ok(())
    }

    /// Trainable slices in a fixed order: conv kernel, conv bias, bn gamma,
    /// bn beta, dense weights, dense bias.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for lp in &self.layers {
            match lp {
                LayerParams::Conv { conv, bn } => {
                    out.push(&conv.kernel);
                    out.push(&conv.bias);
                    if let Some(bn) = bn {
                        out.push(&bn.gamma);
                        out.push(&bn.beta);
                    }
                }
                LayerParams::Dense(d) => {
                    out.push(&d.weights);
                    out.push(&d.bias);
                }
                LayerParams::Stateless => {}
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for lp in &mut self.layers {
            match lp {
                LayerParams::Conv { conv, bn } => {
                    out.push(&mut conv.kernel);
                    out.push(&mut conv.bias);
                    if let Some(bn) = bn {
                        out.push(&mut bn.gamma);
                        out.push(&mut bn.beta);
                    }
                }
                LayerParams::Dense(d) => {
                    out.push(&mut d.weights);
                    out.push(&mut d.bias);
                }
                LayerParams::Stateless => {}
            }
        }
        out
    }

    pub fn trainable_len(&self) -> usize {
        self.trainable().iter().map(|s| s.len()).sum()
    }

    /// Zeroed copy with identical structure, used as a gradient container.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.trainable_mut() {
            s.fill(0.0);
        }
        z
    }
}

/// Folds every batchnorm into its conv and clears the spec flags.
pub fn fold_model(spec: &ModelSpec, params: &ModelParams) -> Result<(ModelSpec, ModelParams)> {
    params.validate(spec)?;
    let folded_spec = spec.clone().with_batchnorm(false);
    let layers = params
        .layers
        .iter()
        .map(|lp| match lp {
            LayerParams::Conv { conv, bn: Some(bn) } => Ok(LayerParams::Conv {
                conv: fold_batchnorm(conv, bn)?,
                bn: None,
            }),
            other => Ok(other.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((folded_spec, ModelParams { layers }))
}

/// One primitive step of the forward chain, recorded for backpropagation.
#[derive(Debug, Clone)]
pub(crate) enum TraceStep {
    Conv {
        layer: usize,
        input: Tensor,
    },
    BatchNorm {
        layer: usize,
        input: Tensor,
    },
    Relu {
        output: Tensor,
    },
    MaxPool {
        input_shape: Shape,
        argmax: Vec<usize>,
    },
    AvgPool {
        input_shape: Shape,
        spec: PoolSpec,
    },
    Flatten {
        shape: Shape,
    },
    Dense {
        layer: usize,
        input: Vec<f64>,
    },
}

fn named(name: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Config(format!("layer {name}: {e}"))
}

/// Runs layers `0..=last` and returns the output of layer `last`. When
/// `trace` is given, the information needed for the backward pass is kept.
pub(crate) fn run_layers(
    spec: &ModelSpec,
    params: &ModelParams,
    input: &Tensor,
    last: usize,
    trace: Option<&mut Vec<TraceStep>>,
) -> Result<Tensor> {
    if input.shape() != spec.input {
        return config(format!(
            "input shape {} does not match model input {}",
            input.shape(),
            spec.input
        ));
    }
    run_range(spec, params, input.clone(), 0..last + 1, trace)
}

/// Runs layers `range` on `x`, the output of the layer just before it.
pub(crate) fn run_range(
    spec: &ModelSpec,
    params: &ModelParams,
    mut x: Tensor,
    range: std::ops::Range<usize>,
    mut trace: Option<&mut Vec<TraceStep>>,
) -> Result<Tensor> {
    if params.layers.len() != spec.layers.len() {
        return config("parameter blocks do not match spec layers");
    }
    for (i, (layer, lp)) in spec
        .layers
        .iter()
        .zip(&params.layers)
        .enumerate()
        .take(range.end)
        .skip(range.start)
    {
        x = match (&layer.kind, lp) {
            (LayerKind::Conv(c), LayerParams::Conv { conv, bn }) => {
                let mut y = conv2d_forward(&x, conv).map_err(named(&layer.name))?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(TraceStep::Conv { layer: i, input: x });
                }
                if c.batchnorm {
                    let bn = bn.as_ref().ok_or_else(|| {
                        Error::Config(format!("layer {}: missing batchnorm", layer.name))
                    })?;
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(TraceStep::BatchNorm {
                            layer: i,
                            input: y.clone(),
                        });
                    }
                    bn.apply(&mut y).map_err(named(&layer.name))?;
                }
                if c.relu {
                    relu_in_place(&mut y);
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(TraceStep::Relu { output: y.clone() });
                    }
                }
                y
            }
            (LayerKind::Pool(p), LayerParams::Stateless) => {
                let (y, argmax) = pool_with_argmax(&x, p).map_err(named(&layer.name))?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(match p.mode {
                        super::layers::PoolMode::Max => TraceStep::MaxPool {
                            input_shape: x.shape(),
                            argmax,
                        },
                        super::layers::PoolMode::Avg => TraceStep::AvgPool {
                            input_shape: x.shape(),
                            spec: *p,
                        },
                    });
                }
                y
            }
            (LayerKind::Flatten, LayerParams::Stateless) => {
                let shape = x.shape();
                if let Some(t) = trace.as_deref_mut() {
                    t.push(TraceStep::Flatten { shape });
                }
                x.reshape(Shape::new(shape.len(), 1, 1))?
            }
            (LayerKind::Dense { .. }, LayerParams::Dense(d)) => {
                let y = dense_forward(x.data(), d).map_err(named(&layer.name))?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(TraceStep::Dense {
                        layer: i,
                        input: x.into_data(),
                    });
                }
                Tensor::new(Shape::new(y.len(), 1, 1), y)?
            }
            _ => {
                return config(format!(
                    "layer {}: parameters do not match spec",
                    layer.name
                ))
            }
        };
    }
    Ok(x)
}

/// Raw logits of `input` (no softmax).
pub fn model_forward(spec: &ModelSpec, params: &ModelParams, input: &Tensor) -> Result<Vec<f64>> {
    run_layers(spec, params, input, spec.layers.len() - 1, None).map(Tensor::into_data)
}

/// Output of the named layer (after its batchnorm and activation).
pub fn layer_output(
    spec: &ModelSpec,
    params: &ModelParams,
    input: &Tensor,
    layer: &str,
) -> Result<Tensor> {
    let idx = spec
        .layer_index(layer)
        .ok_or_else(|| Error::Config(format!("unknown layer tag {layer:?}")))?;
    run_layers(spec, params, input, idx, None)
}

/// Logits for every input; samples are independent so `mode` only affects
/// scheduling.
pub fn forward_batch(
    spec: &ModelSpec,
    params: &ModelParams,
    inputs: &[Tensor],
    mode: ExecMode,
) -> Result<Vec<Vec<f64>>> {
    par::map_indexed(mode, inputs, |_, x| model_forward(spec, params, x))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_network_gives_zero_logits() {
        let spec = ModelSpec::student();
        let params = ModelParams::zeros(&spec).unwrap();
        let x = Tensor::filled(spec.input, 0.3);
        assert_eq!(model_forward(&spec, &params, &x).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn batch_equals_independent_runs() {
        let spec = ModelSpec::student();
        let mut r = rng::stream(9, "init");
        let params = ModelParams::init(&spec, &mut r).unwrap();
        let xs: Vec<Tensor> = (0..2)
            .map(|_| {
                Tensor::new(
                    spec.input,
                    (0..spec.input.len())
                        .map(|_| r.gen_range(-1.0..1.0))
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let batch = forward_batch(&spec, &params, &xs, ExecMode::Parallel).unwrap();
        for (x, b) in xs.iter().zip(&batch) {
            let single = model_forward(&spec, &params, x).unwrap();
            assert_eq!(
                single.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn wrong_input_shape_is_config_error() {
        let spec = ModelSpec::student();
        let params = ModelParams::zeros(&spec).unwrap();
        let x = Tensor::zeros(Shape::new(1, 255, 11));
        assert!(matches!(
            model_forward(&spec, &params, &x),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn folded_model_matches_unfolded() {
        let spec = ModelSpec::student();
        let mut r = rng::stream(4, "init");
        let mut params = ModelParams::init(&spec, &mut r).unwrap();
        for lp in &mut params.layers {
            if let LayerParams::Conv { bn: Some(bn), .. } = lp {
                bn.gamma.iter_mut().for_each(|g| *g = r.gen_range(0.5..1.5));
                bn.beta.iter_mut().for_each(|g| *g = r.gen_range(-0.2..0.2));
                bn.mean.iter_mut().for_each(|g| *g = r.gen_range(-0.2..0.2));
                bn.var.iter_mut().for_each(|g| *g = r.gen_range(0.5..2.0));
            }
        }
        let (fs, fp) = fold_model(&spec, &params).unwrap();
        let x = Tensor::new(
            spec.input,
            (0..spec.input.len())
                .map(|_| r.gen_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let a = model_forward(&spec, &params, &x).unwrap();
        let b = model_forward(&fs, &fp, &x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_output_tags() {
        let spec = ModelSpec::student();
        let params = ModelParams::zeros(&spec).unwrap();
        let x = Tensor::zeros(spec.input);
        assert_eq!(
            layer_output(&spec, &params, &x, "flatten")
                .unwrap()
                .shape()
                .len(),
            2048
        );
        assert!(layer_output(&spec, &params, &x, "nope").is_err());
    }
}
