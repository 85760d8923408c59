use serde::{Deserialize, Serialize};

use super::layers::{conv_extent, PoolMode, PoolSpec};
use crate::error::{config, Result};
use crate::tensor::Shape;

/// Class labels in table order.
pub const CLASS_NAMES: [&str; 3] = ["Hammer", "Air Pick", "Excavator"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub relu: bool,
    pub batchnorm: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv(ConvSpec),
    Pool(PoolSpec),
    Flatten,
    Dense { outputs: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

/// Ordered layer graph of a classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
}

fn conv(name: &str, out: usize) -> LayerSpec {
    LayerSpec {
        name: name.into(),
        kind: LayerKind::Conv(ConvSpec {
            out_channels: out,
            kernel: (3, 3),
            stride: 1,
            padding: 1,
            relu: true,
            batchnorm: true,
        }),
    }
}

fn pool(name: &str, mode: PoolMode) -> LayerSpec {
    LayerSpec {
        name: name.into(),
        kind: LayerKind::Pool(PoolSpec {
            mode,
            window: (2, 2),
            stride: 2,
        }),
    }
}

impl ModelSpec {
    /// The four-layer student: 3x3 convs with 8/16/32/64 channels, two max
    /// pools and one average pool, flatten to 2048 and a 3-way classifier.
    /// Batchnorm and ReLU follow every conv.
    pub fn student() -> Self {
        Self::student_with_width(1)
    }

    /// Same chain with every conv channel count multiplied by `width`.
    pub fn student_with_width(width: usize) -> Self {
        let w = width.max(1);
        Self {
            input: Shape::new(1, 256, 11),
            layers: vec![
                conv("conv1", 8 * w),
                pool("maxpool1", PoolMode::Max),
                conv("conv2", 16 * w),
                pool("maxpool2", PoolMode::Max),
                conv("conv3", 32 * w),
                pool("avgpool1", PoolMode::Avg),
                conv("conv4", 64 * w),
                LayerSpec {
                    name: "flatten".into(),
                    kind: LayerKind::Flatten,
                },
                LayerSpec {
                    name: "fc1".into(),
                    kind: LayerKind::Dense { outputs: 3 },
                },
            ],
            class_count: 3,
        }
    }

    /// Teacher-style variant: the same conv chain (times `width`) followed by
    /// a global average pool, so the classifier sees `64 * width`
    /// position-free features instead of 2048 positional ones.
    pub fn global_pool_with_width(width: usize) -> Self {
        let mut spec = Self::student_with_width(width);
        let shapes = spec.layer_shapes().expect("built-in chain composes");
        let flatten = spec
            .layer_index("flatten")
            .expect("built-in chain has flatten");
        let before = shapes[flatten];
        let window = (before.rows, before.cols);
        spec.layers.insert(
            flatten,
            LayerSpec {
                name: "gap".into(),
                kind: LayerKind::Pool(PoolSpec {
                    mode: PoolMode::Avg,
                    window,
                    stride: window.0.max(window.1),
                }),
            },
        );
        spec
    }

    /// Small 8/4/4-channel variant with the same layer kinds on a
    /// `rows x cols` input, for gradient checks and quick experiments.
    pub fn reduced(rows: usize, cols: usize) -> Self {
        Self {
            input: Shape::new(1, rows, cols),
            layers: vec![
                conv("conv1", 8),
                pool("maxpool1", PoolMode::Max),
                conv("conv2", 4),
                pool("avgpool1", PoolMode::Avg),
                conv("conv3", 4),
                LayerSpec {
                    name: "flatten".into(),
                    kind: LayerKind::Flatten,
                },
                LayerSpec {
                    name: "fc1".into(),
                    kind: LayerKind::Dense { outputs: 3 },
                },
            ],
            class_count: 3,
        }
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        for l in &mut self.layers {
            if let LayerKind::Conv(c) = &mut l.kind {
                c.batchnorm = on;
            }
        }
        self
    }

    pub fn with_relu(mut self, on: bool) -> Self {
        for l in &mut self.layers {
            if let LayerKind::Conv(c) = &mut l.kind {
                c.relu = on;
            }
        }
        self
    }

    /// Input shape of every layer followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let shapes = self.layer_shapes()?;
        let last = *shapes.last().unwrap();
        if last.len() != self.class_count {
            return config(format!(
                "model output {last} does not match {} classes",
                self.class_count
            ));
        }
        Ok(shapes)
    }

    /// Like [`shapes`](Self::shapes) without checking the class count.
    pub fn layer_shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut cur = self.input;
        if cur.is_empty() {
            return config("model input extents must be >= 1");
        }
        shapes.push(cur);
        for layer in &self.layers {
            cur = match &layer.kind {
                LayerKind::Conv(c) => {
                    if c.stride == 0 || c.kernel.0 == 0 || c.kernel.1 == 0 || c.out_channels == 0 {
                        return config(format!("layer {}: invalid conv settings", layer.name));
                    }
                    let rows = conv_extent(cur.rows, c.kernel.0, c.stride, c.padding)
                        .map_err(|e| crate::Error::Config(format!("layer {}: {e}", layer.name)))?;
                    let cols = conv_extent(cur.cols, c.kernel.1, c.stride, c.padding)
                        .map_err(|e| crate::Error::Config(format!("layer {}: {e}", layer.name)))?;
                    Shape::new(c.out_channels, rows, cols)
                }
                LayerKind::Pool(p) => p
                    .output_shape(cur)
                    .map_err(|e| crate::Error::Config(format!("layer {}: {e}", layer.name)))?,
                LayerKind::Flatten => Shape::new(cur.len(), 1, 1),
                LayerKind::Dense { outputs } => {
                    if cur.rows != 1 || cur.cols != 1 {
                        return config(format!(
                            "layer {}: dense input must be flat, got {cur}",
                            layer.name
                        ));
                    }
                    Shape::new(*outputs, 1, 1)
                }
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Element count of the flatten layer, if any.
    pub fn flatten_size(&self) -> Result<Option<usize>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .position(|l| matches!(l.kind, LayerKind::Flatten))
            .map(|i| shapes[i + 1].len()))
    }
}

/// Parameter and operation counts of a spec.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    pub param_count: usize,
    pub flop_count: usize,
    pub convention: String,
}

pub const FLOP_CONVENTION: &str =
    "1 MAC = 1 FLOP for conv and dense; each bias add = 1 FLOP; pooling, activation and batchnorm not counted";

/// Parameters: kernels, biases, dense weights, and batchnorm gamma/beta where
/// enabled (running statistics are buffers, not parameters).
pub fn count_report(spec: &ModelSpec) -> Result<CountReport> {
    let shapes = spec.shapes()?;
    let mut params = 0;
    let mut flops = 0;
    for (i, layer) in spec.layers.iter().enumerate() {
        let (inp, out) = (shapes[i], shapes[i + 1]);
        match &layer.kind {
            LayerKind::Conv(c) => {
                let fan_in = inp.channels * c.kernel.0 * c.kernel.1;
                params += c.out_channels * fan_in + c.out_channels;
                if c.batchnorm {
                    params += 2 * c.out_channels;
                }
                flops += out.len() * fan_in + out.len();
            }
            LayerKind::Dense { outputs } => {
                params += outputs * inp.len() + outputs;
                flops += outputs * inp.len() + outputs;
            }
            LayerKind::Pool(_) | LayerKind::Flatten => {}
        }
    }
    Ok(CountReport {
        param_count: params,
        flop_count: flops,
        convention: FLOP_CONVENTION.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shapes() {
        let shapes = ModelSpec::student().shapes().unwrap();
        let expect = [
            (1, 256, 11),
            (8, 256, 11),
            (8, 128, 5),
            (16, 128, 5),
            (16, 64, 2),
            (32, 64, 2),
            (32, 32, 1),
            (64, 32, 1),
            (2048, 1, 1),
            (3, 1, 1),
        ];
        let got: Vec<_> = shapes
            .iter()
            .map(|s| (s.channels, s.rows, s.cols))
            .collect();
        assert_eq!(got, expect);
        assert_eq!(ModelSpec::student().flatten_size().unwrap(), Some(2048));
    }

    #[test]
    fn parameter_counts() {
        let with_bn = count_report(&ModelSpec::student()).unwrap();
        assert_eq!(with_bn.param_count, 30771);
        let without = count_report(&ModelSpec::student().with_batchnorm(false)).unwrap();
        assert_eq!(without.param_count, 30531);
        // MACs alone give 2,125,824; bias adds 38,915 more.
        assert_eq!(without.flop_count, 2_125_824 + 38_915);
        assert!(without.convention.contains("MAC"));
    }

    #[test]
    fn smallest_conv_counts_two() {
        let spec = ModelSpec {
            input: Shape::new(1, 1, 1),
            layers: vec![LayerSpec {
                name: "c".into(),
                kind: LayerKind::Conv(ConvSpec {
                    out_channels: 1,
                    kernel: (1, 1),
                    stride: 1,
                    padding: 0,
                    relu: false,
                    batchnorm: false,
                }),
            }],
            class_count: 1,
        };
        assert_eq!(count_report(&spec).unwrap().param_count, 2);
    }

    #[test]
    fn broken_chain_is_rejected() {
        let mut spec = ModelSpec::student();
        spec.layers.remove(7);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ModelSpec::student_with_width(2);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&text).unwrap(), spec);
    }
}
