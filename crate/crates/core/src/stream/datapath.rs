use crate::engine::{pool_window, IntLayer, SaturationMode, ShiftEngine};
use crate::error::{Error, Result};
use crate::nn::{LayerKind, LayerParams, ModelParams, ModelSpec, PoolMode};

/// Arithmetic behind the streaming stages, shared by the float and integer
/// simulations.
pub trait Datapath {
    type Value: Copy + Default + PartialEq + std::fmt::Debug;
    type Acc: Copy;

    /// Every output channel of a conv or pool layer for one window laid out
    /// `[N][P][Q]`, padding taps set to zero.
    fn window(&mut self, layer: usize, window: &[Self::Value]) -> Result<Vec<Self::Value>>;
    /// Fresh accumulators, one per output of a dense layer.
    fn dense_start(&self, layer: usize) -> Result<Vec<Self::Acc>>;
    /// Adds input `x` at flattened position `index` to every accumulator.
    fn dense_add(&self, layer: usize, acc: &mut [Self::Acc], index: usize, x: Self::Value);
    fn dense_finish(&mut self, layer: usize, acc: &[Self::Acc]) -> Result<Vec<Self::Value>>;
}

/// Reference floating-point arithmetic.
pub struct FloatDatapath<'a> {
    pub spec: &'a ModelSpec,
    pub params: &'a ModelParams,
}

impl Datapath for FloatDatapath<'_> {
    type Value = f64;
    type Acc = f64;

    fn window(&mut self, layer: usize, window: &[f64]) -> Result<Vec<f64>> {
        match (&self.spec.layers[layer].kind, &self.params.layers[layer]) {
            (LayerKind::Conv(c), LayerParams::Conv { conv, bn }) => {
                let n = window.len();
                Ok((0..conv.out_channels)
                    .map(|m| {
                        let mut v = 0.0;
                        for (k, x) in conv.kernel[m * n..(m + 1) * n].iter().zip(window) {
                            v += k * x;
                        }
                        v += conv.bias[m];
                        if let (true, Some(bn)) = (c.batchnorm, bn) {
                            v = (v - bn.mean[m]) * bn.scale(m) + bn.beta[m];
                        }
                        if c.relu && v < 0.0 {
                            v = 0.0;
                        }
                        v
                    })
                    .collect())
            }
            (LayerKind::Pool(p), _) => {
                let len = p.window.0 * p.window.1;
                Ok(window
                    .chunks(len)
                    .map(|w| match p.mode {
                        PoolMode::Max => {
                            w.iter()
                                .copied()
                                .fold(f64::NEG_INFINITY, |a, b| if b > a { b } else { a })
                        }
                        PoolMode::Avg => w.iter().fold(0.0, |a, b| a + b) / len as f64,
                    })
                    .collect())
            }
            _ => Err(Error::Config(format!(
                "layer {} is not windowed",
                self.spec.layers[layer].name
            ))),
        }
    }

    fn dense_start(&self, layer: usize) -> Result<Vec<f64>> {
        match &self.params.layers[layer] {
            LayerParams::Dense(d) => Ok(vec![0.0; d.outputs]),
            _ => Err(Error::Config(format!(
                "layer {} is not dense",
                self.spec.layers[layer].name
            ))),
        }
    }

    fn dense_add(&self, layer: usize, acc: &mut [f64], index: usize, x: f64) {
        if let LayerParams::Dense(d) = &self.params.layers[layer] {
            for (o, a) in acc.iter_mut().enumerate() {
                *a += d.weights[o * d.inputs + index] * x;
            }
        }
    }

    fn dense_finish(&mut self, layer: usize, acc: &[f64]) -> Result<Vec<f64>> {
        match &self.params.layers[layer] {
            LayerParams::Dense(d) => Ok(acc.iter().zip(&d.bias).map(|(a, b)| a + b).collect()),
            _ => Err(Error::Config("not a dense layer".into())),
        }
    }
}

/// Shift-add arithmetic of a [`ShiftEngine`]; clamps are counted per layer.
pub struct IntDatapath<'a> {
    pub engine: &'a ShiftEngine,
    pub saturations: Vec<usize>,
}

impl<'a> IntDatapath<'a> {
    pub fn new(engine: &'a ShiftEngine) -> Self {
        Self {
            engine,
            saturations: vec![0; engine.layers.len()],
        }
    }

    fn note(&mut self, layer: usize, clamped: bool) -> Result<()> {
        if clamped {
            if self.engine.config.saturation == SaturationMode::Diagnostic {
                return Err(Error::Saturation {
                    layer: self.engine.layers[layer].name().to_string(),
                    message: "output clamped".into(),
                });
            }
            self.saturations[layer] += 1;
        }
        Ok(())
    }
}

impl Datapath for IntDatapath<'_> {
    type Value = i32;
    type Acc = i64;

    fn window(&mut self, layer: usize, window: &[i32]) -> Result<Vec<i32>> {
        match &self.engine.layers[layer] {
            IntLayer::Conv(c) => {
                let mut out = Vec::with_capacity(c.out_channels);
                for m in 0..c.out_channels {
                    let (v, clamped) = c.output_at(m, window);
                    self.note(layer, clamped)?;
                    out.push(v);
                }
                Ok(out)
            }
            IntLayer::Pool { spec, log2_len, .. } => {
                let len = spec.window.0 * spec.window.1;
                Ok(window
                    .chunks(len)
                    .map(|w| pool_window(spec.mode, *log2_len, w))
                    .collect())
            }
            other => Err(Error::Config(format!(
                "layer {} is not windowed",
                other.name()
            ))),
        }
    }

    fn dense_start(&self, layer: usize) -> Result<Vec<i64>> {
        match &self.engine.layers[layer] {
            IntLayer::Dense(c) => Ok(vec![0; c.out_channels]),
            other => Err(Error::Config(format!(
                "layer {} is not dense",
                other.name()
            ))),
        }
    }

    fn dense_add(&self, layer: usize, acc: &mut [i64], index: usize, x: i32) {
        if let IntLayer::Dense(c) = &self.engine.layers[layer] {
            for (o, a) in acc.iter_mut().enumerate() {
                *a += c.weights[o * c.in_channels + index].apply(x);
            }
        }
    }

    fn dense_finish(&mut self, layer: usize, acc: &[i64]) -> Result<Vec<i32>> {
        let IntLayer::Dense(c) = &self.engine.layers[layer] else {
            return Err(Error::Config("not a dense layer".into()));
        };
        let mut out = Vec::with_capacity(acc.len());
        for (m, &a) in acc.iter().enumerate() {
            let (v, clamped) = c.finish(m, a);
            out.push(v);
            self.note(layer, clamped)?;
        }
        Ok(out)
    }
}
