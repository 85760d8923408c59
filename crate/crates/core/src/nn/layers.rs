//! Reference floating-point kernels.
//!
//! Convolution accumulates every output element over `(n, p, q)` in
//! lexicographic order starting from zero and adds the bias last, so results
//! are reproducible bit for bit across runs and match the streaming kernels.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Convolution kernel `[M][N][P][Q]` with per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    pub stride: usize,
    pub padding: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayerParams {
    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_rows: kernel.0,
            kernel_cols: kernel.1,
            stride,
            padding,
            kernel: vec![0.0; out_channels * in_channels * kernel.0 * kernel.1],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_rows == 0 || self.kernel_cols == 0 || self.stride == 0 {
            return config("kernel extents and stride must be >= 1");
        }
        if self.out_channels == 0 || self.in_channels == 0 {
            return config("channel counts must be >= 1");
        }
        if self.kernel.len() != self.weight_count() || self.bias.len() != self.out_channels {
            return config(format!(
                "conv parameter lengths {}/{} do not match {}x{}x{}x{}",
                self.kernel.len(),
                self.bias.len(),
                self.out_channels,
                self.in_channels,
                self.kernel_rows,
                self.kernel_cols
            ));
        }
        Ok(())
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_rows * self.kernel_cols
    }

    #[inline]
    pub fn kernel_index(&self, m: usize, n: usize, p: usize, q: usize) -> usize {
        ((m * self.in_channels + n) * self.kernel_rows + p) * self.kernel_cols + q
    }

    /// Output shape for `input`, checking channel count and window fit.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.in_channels {
            return config(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, input.channels
            ));
        }
        let rows = conv_extent(input.rows, self.kernel_rows, self.stride, self.padding)?;
        let cols = conv_extent(input.cols, self.kernel_cols, self.stride, self.padding)?;
        Ok(Shape::new(self.out_channels, rows, cols))
    }
}

/// Output extent along one axis: `floor((len + 2*pad - window) / stride) + 1`.
pub fn conv_extent(len: usize, window: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    if window > padded {
        return config(format!("window {window} larger than padded input {padded}"));
    }
    Ok((padded - window) / stride + 1)
}

/// Range of output indices whose tap `offset` lands inside `[0, len)`.
#[inline]
pub(crate) fn valid_outputs(
    out_len: usize,
    len: usize,
    offset: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    let lo = if offset >= pad {
        0
    } else {
        (pad - offset).div_ceil(stride)
    };
    if len + pad <= offset {
        return (0, 0);
    }
    let hi = ((len - 1 + pad - offset) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Unrolls every receptive field of `input` into a row of `N*P*Q` values in
/// `(n, p, q)` order, one row per output position. Padding taps are zero.
pub(crate) fn im2col(input: &Tensor, params: &ConvLayerParams, out_shape: Shape) -> Vec<f64> {
    let in_shape = input.shape();
    let (kr, kc, s, pad) = (
        params.kernel_rows,
        params.kernel_cols,
        params.stride,
        params.padding,
    );
    let k_len = params.in_channels * kr * kc;
    let mut cols = vec![0.0; out_shape.rows * out_shape.cols * k_len];
    for n in 0..params.in_channels {
        let in_ch = input.channel(n);
        for p in 0..kr {
            let (ox_lo, ox_hi) = valid_outputs(out_shape.rows, in_shape.rows, p, s, pad);
            for q in 0..kc {
                let k = (n * kr + p) * kc + q;
                let (oy_lo, oy_hi) = valid_outputs(out_shape.cols, in_shape.cols, q, s, pad);
                for ox in ox_lo..ox_hi {
                    let in_row = &in_ch[(ox * s + p - pad) * in_shape.cols..];
                    for oy in oy_lo..oy_hi {
                        cols[(ox * out_shape.cols + oy) * k_len + k] = in_row[oy * s + q - pad];
                    }
                }
            }
        }
    }
    cols
}

pub fn conv2d_forward(input: &Tensor, params: &ConvLayerParams) -> Result<Tensor> {
    params.validate()?;
    let out_shape = params.output_shape(input.shape())?;
    let cols = im2col(input, params, out_shape);
    let k_len = params.in_channels * params.kernel_rows * params.kernel_cols;
    let positions = out_shape.rows * out_shape.cols;
    let mut out = Tensor::zeros(out_shape);
    let data = out.data_mut();
    // four output channels at a time; each sum still runs in tap order
    let mut m = 0;
    while m < params.out_channels {
        let block = (params.out_channels - m).min(4);
        let ks: Vec<&[f64]> = (m..m + block)
            .map(|i| &params.kernel[i * k_len..(i + 1) * k_len])
            .collect();
        for pos in 0..positions {
            let patch = &cols[pos * k_len..(pos + 1) * k_len];
            let mut acc = [0.0f64; 4];
            if block == 4 {
                for (j, x) in patch.iter().enumerate() {
                    acc[0] += ks[0][j] * x;
                    acc[1] += ks[1][j] * x;
                    acc[2] += ks[2][j] * x;
                    acc[3] += ks[3][j] * x;
                }
            } else {
                for (b, k) in ks.iter().enumerate() {
                    acc[b] = k.iter().zip(patch).fold(0.0, |a, (w, x)| a + w * x);
                }
            }
            for b in 0..block {
                data[(m + b) * positions + pos] = acc[b] + params.bias[m + b];
            }
        }
        m += block;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub mode: PoolMode,
    pub window: (usize, usize),
    pub stride: usize,
}

impl PoolSpec {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let (p, q) = self.window;
        if p == 0 || q == 0 || self.stride == 0 {
            return config("pool window and stride must be >= 1");
        }
        if p > input.rows || q > input.cols {
            return config(format!(
                "pool window {p}x{q} larger than input {}x{}",
                input.rows, input.cols
            ));
        }
        Ok(Shape::new(
            input.channels,
            (input.rows - p) / self.stride + 1,
            (input.cols - q) / self.stride + 1,
        ))
    }
}

pub fn pool2d_forward(input: &Tensor, spec: &PoolSpec) -> Result<Tensor> {
    pool_with_argmax(input, spec).map(|(t, _)| t)
}

/// Pooling that also returns, for max mode, the flat input index that won
/// each window (first maximum in `(p, q)` order).
pub(crate) fn pool_with_argmax(input: &Tensor, spec: &PoolSpec) -> Result<(Tensor, Vec<usize>)> {
    let in_shape = input.shape();
    let out_shape = spec.output_shape(in_shape)?;
    let (p_len, q_len) = spec.window;
    let s = spec.stride;
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = Vec::new();
    if spec.mode == PoolMode::Max {
        argmax.reserve(out_shape.len());
    }
    let area = (p_len * q_len) as f64;
    for c in 0..in_shape.channels {
        for ox in 0..out_shape.rows {
            for oy in 0..out_shape.cols {
                let v = match spec.mode {
                    PoolMode::Max => {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = input.index(c, ox * s, oy * s);
                        for p in 0..p_len {
                            for q in 0..q_len {
                                let i = input.index(c, ox * s + p, oy * s + q);
                                let x = input.data()[i];
                                if x > best {
                                    best = x;
                                    best_at = i;
                                }
                            }
                        }
                        argmax.push(best_at);
                        input.data()[best_at]
                    }
                    PoolMode::Avg => {
                        let mut sum = 0.0;
                        for p in 0..p_len {
                            for q in 0..q_len {
                                sum += input.get(c, ox * s + p, oy * s + q);
                            }
                        }
                        sum / area
                    }
                };
                out.set(c, ox, oy, v);
            }
        }
    }
    Ok((out, argmax))
}

/// Fully connected layer, weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub outputs: usize,
    pub inputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            outputs,
            inputs,
            weights: vec![0.0; outputs * inputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.outputs * self.inputs || self.bias.len() != self.outputs {
            return config(format!(
                "dense parameter lengths {}/{} do not match {}x{}",
                self.weights.len(),
                self.bias.len(),
                self.outputs,
                self.inputs
            ));
        }
        Ok(())
    }
}

pub fn dense_forward(input: &[f64], params: &DenseParams) -> Result<Vec<f64>> {
    params.validate()?;
    if input.len() != params.inputs {
        return config(format!(
            "dense expects {} inputs, got {}",
            params.inputs,
            input.len()
        ));
    }
    Ok(params
        .weights
        .chunks_exact(params.inputs)
        .zip(&params.bias)
        .map(|(row, b)| row.iter().zip(input).fold(0.0, |acc, (w, x)| acc + w * x) + b)
        .collect())
}

/// Per-channel affine batch normalization with frozen statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl BatchNormParams {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.mean.len() != c || self.var.len() != c {
            return config("batchnorm vectors differ in length");
        }
        if !(self.eps >= 0.0) {
            return config("batchnorm epsilon must be >= 0");
        }
        if let Some(v) = self
            .var
            .iter()
            .find(|v| !(**v >= 0.0) || **v + self.eps <= 0.0)
        {
            return config(format!(
                "batchnorm variance {v} invalid with eps {}",
                self.eps
            ));
        }
        Ok(())
    }

    /// `gamma / sqrt(var + eps)` for channel `c`.
    #[inline]
    pub fn scale(&self, c: usize) -> f64 {
        self.gamma[c] / (self.var[c] + self.eps).sqrt()
    }

    pub fn apply(&self, t: &mut Tensor) -> Result<()> {
        if t.shape().channels != self.channels() {
            return config(format!(
                "batchnorm has {} channels, tensor has {}",
                self.channels(),
                t.shape().channels
            ));
        }
        for c in 0..self.channels() {
            let (scale, mean, beta) = (self.scale(c), self.mean[c], self.beta[c]);
            for v in t.channel_mut(c) {
                *v = (*v - mean) * scale + beta;
            }
        }
        Ok(())
    }
}

/// Folds a batchnorm that follows `conv` into the conv weights and bias.
pub fn fold_batchnorm(conv: &ConvLayerParams, bn: &BatchNormParams) -> Result<ConvLayerParams> {
    conv.validate()?;
    bn.validate()?;
    if bn.channels() != conv.out_channels {
        return config(format!(
            "batchnorm has {} channels, conv has {} outputs",
            bn.channels(),
            conv.out_channels
        ));
    }
    let mut folded = conv.clone();
    let per_out = conv.in_channels * conv.kernel_rows * conv.kernel_cols;
    for m in 0..conv.out_channels {
        let scale = bn.scale(m);
        for k in &mut folded.kernel[m * per_out..(m + 1) * per_out] {
            *k *= scale;
        }
        folded.bias[m] = (conv.bias[m] - bn.mean[m]) * scale + bn.beta[m];
    }
    Ok(folded)
}

pub fn relu_in_place(t: &mut Tensor) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// `exp(x_i / T) / sum_j exp(x_j / T)`, evaluated after subtracting the max.
pub fn softmax_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let scaled = scaled_logits(logits, temperature)?;
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Log of [`softmax_temperature`], via log-sum-exp.
pub fn log_softmax_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let scaled = scaled_logits(logits, temperature)?;
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(scaled.into_iter().map(|x| x - lse).collect())
}

fn scaled_logits(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Domain(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    if let Some(x) = logits.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("non-finite logit {x}")));
    }
    Ok(logits.iter().map(|x| x / temperature).collect())
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
        Tensor::new(
            shape,
            (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn random_conv(
        rng: &mut ChaCha8Rng,
        m: usize,
        n: usize,
        k: (usize, usize),
        s: usize,
        pad: usize,
    ) -> ConvLayerParams {
        let mut c = ConvLayerParams::zeros(m, n, k, s, pad);
        c.kernel
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-1.0..1.0));
        c.bias
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-1.0..1.0));
        c
    }

    /// Six nested loops straight from the convolution sum.
    fn naive_conv(input: &Tensor, c: &ConvLayerParams) -> Tensor {
        let sh = input.shape();
        let out_rows = (sh.rows + 2 * c.padding - c.kernel_rows) / c.stride + 1;
        let out_cols = (sh.cols + 2 * c.padding - c.kernel_cols) / c.stride + 1;
        let mut out = Tensor::zeros(Shape::new(c.out_channels, out_rows, out_cols));
        for m in 0..c.out_channels {
            for x in 0..out_rows {
                for y in 0..out_cols {
                    let mut acc = 0.0;
                    for n in 0..c.in_channels {
                        for p in 0..c.kernel_rows {
                            for q in 0..c.kernel_cols {
                                let ix = (x * c.stride + p) as isize - c.padding as isize;
                                let iy = (y * c.stride + q) as isize - c.padding as isize;
                                if ix < 0
                                    || iy < 0
                                    || ix >= sh.rows as isize
                                    || iy >= sh.cols as isize
                                {
                                    continue;
                                }
                                acc += input.get(n, ix as usize, iy as usize)
                                    * c.kernel[c.kernel_index(m, n, p, q)];
                            }
                        }
                    }
                    out.set(m, x, y, acc + c.bias[m]);
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, Shape::new(1, 7, 5));
        let mut c = ConvLayerParams::zeros(1, 1, (1, 1), 1, 0);
        c.kernel[0] = 1.0;
        assert_eq!(conv2d_forward(&x, &c).unwrap(), x);
    }

    #[test]
    fn all_ones_kernel_sums_nine() {
        let x = Tensor::filled(Shape::new(1, 3, 3), 1.0);
        let mut c = ConvLayerParams::zeros(1, 1, (3, 3), 1, 0);
        c.kernel.fill(1.0);
        let y = conv2d_forward(&x, &c).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1));
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn first_table_layer_keeps_frame_extent() {
        let x = Tensor::zeros(Shape::new(1, 256, 11));
        let c = ConvLayerParams::zeros(8, 1, (3, 3), 1, 1);
        assert_eq!(
            conv2d_forward(&x, &c).unwrap().shape(),
            Shape::new(8, 256, 11)
        );
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros(Shape::new(2, 4, 4));
        let c = ConvLayerParams::zeros(1, 3, (3, 3), 1, 0);
        assert!(matches!(conv2d_forward(&x, &c), Err(Error::Config(_))));
        let c = ConvLayerParams::zeros(1, 2, (7, 3), 1, 1);
        assert!(matches!(conv2d_forward(&x, &c), Err(Error::Config(_))));
    }

    #[test]
    fn conv_matches_naive_loops_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..=4);
            let m = rng.gen_range(1..=3);
            let rows = rng.gen_range(1..=6);
            let cols = rng.gen_range(1..=6);
            let s = rng.gen_range(1..=2);
            let pad = rng.gen_range(0..=2);
            let kp = rng.gen_range(1..=3).min(rows + 2 * pad);
            let kq = rng.gen_range(1..=3).min(cols + 2 * pad);
            let x = random_tensor(&mut rng, Shape::new(n, rows, cols));
            let c = random_conv(&mut rng, m, n, (kp, kq), s, pad);
            assert_eq!(conv2d_forward(&x, &c).unwrap(), naive_conv(&x, &c));
        }
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let sh = Shape::new(3, 9, 7);
            let x = random_tensor(&mut rng, sh);
            let y = random_tensor(&mut rng, sh);
            let mut c = random_conv(&mut rng, 4, 3, (3, 3), 1, 1);
            c.bias.fill(0.0);
            let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let mix = Tensor::new(
                sh,
                x.data()
                    .iter()
                    .zip(y.data())
                    .map(|(u, v)| a * u + b * v)
                    .collect(),
            )
            .unwrap();
            let lhs = conv2d_forward(&mix, &c).unwrap();
            let cx = conv2d_forward(&x, &c).unwrap();
            let cy = conv2d_forward(&y, &c).unwrap();
            for ((l, u), v) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
                assert!(close(*l, a * u + b * v, 1e-6));
            }
        }
    }

    #[test]
    fn pool_examples() {
        let x = Tensor::new(Shape::new(1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let max = PoolSpec {
            mode: PoolMode::Max,
            window: (2, 2),
            stride: 2,
        };
        let avg = PoolSpec {
            mode: PoolMode::Avg,
            ..max
        };
        assert_eq!(pool2d_forward(&x, &max).unwrap().data(), &[4.0]);
        assert_eq!(pool2d_forward(&x, &avg).unwrap().data(), &[2.5]);

        let c = Tensor::filled(Shape::new(2, 5, 4), 0.75);
        for spec in [
            max,
            avg,
            PoolSpec {
                mode: PoolMode::Max,
                window: (3, 2),
                stride: 1,
            },
        ] {
            assert!(pool2d_forward(&c, &spec)
                .unwrap()
                .data()
                .iter()
                .all(|v| *v == 0.75));
        }
        let big = Tensor::zeros(Shape::new(8, 256, 11));
        assert_eq!(
            pool2d_forward(&big, &max).unwrap().shape(),
            Shape::new(8, 128, 5)
        );
        let tiny = Tensor::zeros(Shape::new(1, 1, 4));
        assert!(matches!(pool2d_forward(&tiny, &max), Err(Error::Config(_))));
    }

    #[test]
    fn dense_examples() {
        let d = DenseParams {
            outputs: 1,
            inputs: 3,
            weights: vec![1.0; 3],
            bias: vec![0.5],
        };
        assert_eq!(dense_forward(&[1.0, 2.0, 3.0], &d).unwrap(), vec![6.5]);
        let mut id = DenseParams::zeros(3, 3);
        for i in 0..3 {
            id.weights[i * 3 + i] = 1.0;
        }
        assert_eq!(
            dense_forward(&[0.1, -2.0, 7.0], &id).unwrap(),
            vec![0.1, -2.0, 7.0]
        );
        assert_eq!(
            dense_forward(&vec![1.0; 2048], &DenseParams::zeros(3, 2048))
                .unwrap()
                .len(),
            3
        );
        assert!(dense_forward(&[1.0], &d).is_err());
    }

    #[test]
    fn fold_identity_and_doubling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_conv(&mut rng, 2, 2, (3, 3), 1, 1);
        let mut bn = BatchNormParams::identity(2);
        bn.eps = 0.0;
        assert_eq!(fold_batchnorm(&c, &bn).unwrap(), c);
        bn.gamma.fill(2.0);
        let f = fold_batchnorm(&c, &bn).unwrap();
        for (a, b) in f.kernel.iter().zip(&c.kernel) {
            assert_eq!(*a, 2.0 * b);
        }
        for (a, b) in f.bias.iter().zip(&c.bias) {
            assert_eq!(*a, 2.0 * b);
        }
        assert!(fold_batchnorm(&c, &BatchNormParams::identity(3)).is_err());
    }

    #[test]
    fn fold_matches_conv_then_batchnorm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (m, n) = (rng.gen_range(1..=4), rng.gen_range(1..=3));
            let c = random_conv(&mut rng, m, n, (3, 3), 1, 1);
            let bn = BatchNormParams {
                gamma: (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                beta: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                mean: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                var: (0..m).map(|_| rng.gen_range(0.1..3.0)).collect(),
                eps: 1e-5,
            };
            let x = random_tensor(&mut rng, Shape::new(n, 6, 5));
            let mut reference = conv2d_forward(&x, &c).unwrap();
            bn.apply(&mut reference).unwrap();
            let folded = conv2d_forward(&x, &fold_batchnorm(&c, &bn).unwrap()).unwrap();
            let worst = reference
                .data()
                .iter()
                .zip(folded.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-5, "fold mismatch {worst}");
        }
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_temperature(&[0.0, 0.0, 0.0], 3.7).unwrap();
        assert!(u.iter().all(|p| close(*p, 1.0 / 3.0, 1e-15)));
        let p = softmax_temperature(&[2.0, 0.0], 2.0).unwrap();
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((p[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert!(matches!(
            softmax_temperature(&[1.0], 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            softmax_temperature(&[f64::NAN], 1.0),
            Err(Error::Domain(_))
        ));
        let big = softmax_temperature(&[1000.0, 999.0, -1000.0], 1.0).unwrap();
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0, 0, 0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
