//! Reverse-mode gradients through the layer chain.
//!
//! Batchnorm statistics are treated as constants (they are recalibrated
//! between epochs, not differentiated), so each sample's gradient depends on
//! that sample alone and a batch gradient is the ordered mean of per-sample
//! gradients.

use super::loss::{loss_and_logit_grad, KdConfig};
use crate::error::{Error, Result};
use crate::nn::layers::{im2col, valid_outputs, ConvLayerParams};
use crate::nn::model::{run_layers, TraceStep};
use crate::nn::{LayerParams, ModelParams, ModelSpec};
use crate::par::{self, ExecMode};
use crate::tensor::{Shape, Tensor};

/// Adds the gradient of one sample into `grads` given `d loss / d logits`.
pub(crate) fn backward_sample(
    params: &ModelParams,
    trace: &[TraceStep],
    dlogits: &[f64],
    grads: &mut ModelParams,
) -> Result<()> {
    let mut g = Tensor::new(Shape::new(dlogits.len(), 1, 1), dlogits.to_vec())?;
    for (step_idx, step) in trace.iter().enumerate().rev() {
        g = match step {
            TraceStep::Dense { layer, input } => {
                let (LayerParams::Dense(d), LayerParams::Dense(gd)) =
                    (&params.layers[*layer], &mut grads.layers[*layer])
                else {
                    unreachable!("trace and params disagree");
                };
                let mut dx = vec![0.0; d.inputs];
                for (i, gi) in g.data().iter().enumerate() {
                    gd.bias[i] += gi;
                    let row = i * d.inputs;
                    for j in 0..d.inputs {
                        gd.weights[row + j] += gi * input[j];
                        dx[j] += d.weights[row + j] * gi;
                    }
                }
                Tensor::new(Shape::new(d.inputs, 1, 1), dx)?
            }
            TraceStep::Flatten { shape } => g.reshape(*shape)?,
            TraceStep::AvgPool { input_shape, spec } => {
                let mut dx = Tensor::zeros(*input_shape);
                let (pl, ql) = spec.window;
                let area = (pl * ql) as f64;
                let out = g.shape();
                for c in 0..out.channels {
                    for ox in 0..out.rows {
                        for oy in 0..out.cols {
                            let v = g.get(c, ox, oy) / area;
                            for p in 0..pl {
                                for q in 0..ql {
                                    let i = dx.index(c, ox * spec.stride + p, oy * spec.stride + q);
                                    dx.data_mut()[i] += v;
                                }
                            }
                        }
                    }
                }
                dx
            }
            TraceStep::MaxPool {
                input_shape,
                argmax,
            } => {
                let mut dx = Tensor::zeros(*input_shape);
                for (k, &src) in argmax.iter().enumerate() {
                    dx.data_mut()[src] += g.data()[k];
                }
                dx
            }
            TraceStep::Relu { output } => {
                for (gv, y) in g.data_mut().iter_mut().zip(output.data()) {
                    if *y <= 0.0 {
                        *gv = 0.0;
                    }
                }
                g
            }
            TraceStep::BatchNorm { layer, input } => {
                let (
                    LayerParams::Conv { bn: Some(bn), .. },
                    LayerParams::Conv { bn: Some(gbn), .. },
                ) = (&params.layers[*layer], &mut grads.layers[*layer])
                else {
                    unreachable!("trace and params disagree");
                };
                for c in 0..bn.channels() {
                    let inv_std = 1.0 / (bn.var[c] + bn.eps).sqrt();
                    let scale = bn.gamma[c] * inv_std;
                    let mean = bn.mean[c];
                    let (mut dgamma, mut dbeta) = (0.0, 0.0);
                    for (gv, x) in g.channel_mut(c).iter_mut().zip(input.channel(c)) {
                        dgamma += *gv * (x - mean) * inv_std;
                        dbeta += *gv;
                        *gv *= scale;
                    }
                    gbn.gamma[c] += dgamma;
                    gbn.beta[c] += dbeta;
                }
                g
            }
            TraceStep::Conv { layer, input } => {
                let (LayerParams::Conv { conv, .. }, LayerParams::Conv { conv: gconv, .. }) =
                    (&params.layers[*layer], &mut grads.layers[*layer])
                else {
                    unreachable!("trace and params disagree");
                };
                let need_dx = step_idx > 0;
                let in_shape = input.shape();
                let out_shape = g.shape();
                let k_len = conv.in_channels * conv.kernel_rows * conv.kernel_cols;
                let cols = im2col(input, conv, out_shape);
                let mut dcols = vec![0.0; if need_dx { cols.len() } else { 0 }];
                for m in 0..conv.out_channels {
                    let g_ch = g.channel(m);
                    gconv.bias[m] += g_ch.iter().sum::<f64>();
                    let k_row = &conv.kernel[m * k_len..(m + 1) * k_len];
                    let dk_row = &mut gconv.kernel[m * k_len..(m + 1) * k_len];
                    for (pos, &gv) in g_ch.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let patch = &cols[pos * k_len..(pos + 1) * k_len];
                        for (d, x) in dk_row.iter_mut().zip(patch) {
                            *d += gv * x;
                        }
                        if need_dx {
                            for (d, k) in
                                dcols[pos * k_len..(pos + 1) * k_len].iter_mut().zip(k_row)
                            {
                                *d += gv * k;
                            }
                        }
                    }
                }
                let mut dx = Tensor::zeros(if need_dx {
                    in_shape
                } else {
                    Shape::new(1, 1, 1)
                });
                if need_dx {
                    col2im_add(&dcols, conv, in_shape, out_shape, &mut dx);
                }
                dx
            }
        };
    }
    Ok(())
}

/// Scatters per-position tap gradients back onto the input grid.
fn col2im_add(
    dcols: &[f64],
    conv: &ConvLayerParams,
    in_shape: Shape,
    out_shape: Shape,
    dx: &mut Tensor,
) {
    let (kr, kc, s, pad) = (
        conv.kernel_rows,
        conv.kernel_cols,
        conv.stride,
        conv.padding,
    );
    let k_len = conv.in_channels * kr * kc;
    for n in 0..conv.in_channels {
        let dx_ch = dx.channel_mut(n);
        for p in 0..kr {
            let (ox_lo, ox_hi) = valid_outputs(out_shape.rows, in_shape.rows, p, s, pad);
            for q in 0..kc {
                let k = (n * kr + p) * kc + q;
                let (oy_lo, oy_hi) = valid_outputs(out_shape.cols, in_shape.cols, q, s, pad);
                for ox in ox_lo..ox_hi {
                    let row = (ox * s + p - pad) * in_shape.cols;
                    for oy in oy_lo..oy_hi {
                        dx_ch[row + oy * s + q - pad] +=
                            dcols[(ox * out_shape.cols + oy) * k_len + k];
                    }
                }
            }
        }
    }
}

/// One training example as seen by the gradient code.
#[derive(Debug, Clone, Copy)]
pub struct GradSample<'a> {
    pub id: &'a str,
    pub frame: &'a Tensor,
    pub label: usize,
    pub teacher: Option<&'a [f64]>,
}

/// Loss and parameter gradient of a single sample.
pub fn sample_gradient(
    spec: &ModelSpec,
    params: &ModelParams,
    sample: &GradSample<'_>,
    kd: Option<&KdConfig>,
) -> Result<(f64, ModelParams)> {
    let mut trace = Vec::new();
    let logits = run_layers(
        spec,
        params,
        sample.frame,
        spec.layers.len() - 1,
        Some(&mut trace),
    )?
    .into_data();
    let teacher = if kd.is_some() { sample.teacher } else { None };
    let (loss, dlogits) = loss_and_logit_grad(&logits, teacher, sample.label, kd)?;
    if !loss.is_finite() || dlogits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            sample: sample.id.to_string(),
            message: format!("loss {loss}"),
        });
    }
    let mut grads = params.zeros_like();
    backward_sample(params, &trace, &dlogits, &mut grads)?;
    Ok((loss, grads))
}

/// Mean loss and mean gradient over `batch`. Per-sample work may run in
/// parallel; the reduction always happens in batch order.
pub fn backward_gradients(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &[GradSample<'_>],
    kd: Option<&KdConfig>,
    mode: ExecMode,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let per_sample = par::map_indexed(mode, batch, |_, s| sample_gradient(spec, params, s, kd));
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        for (acc, src) in total.trainable_mut().into_iter().zip(g.trainable()) {
            acc.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for s in total.trainable_mut() {
        s.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss * inv, total))
}
