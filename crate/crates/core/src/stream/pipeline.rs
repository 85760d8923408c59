use serde::{Deserialize, Serialize};

use super::datapath::Datapath;
use super::line_buffer::{LineBuffer, WindowGeometry};
use crate::error::{Error, Result};
use crate::nn::{LayerKind, ModelSpec};
use crate::tensor::Shape;

enum StageKind<V, A> {
    Window(LineBuffer<V>),
    Flatten,
    Dense(Vec<A>),
}

/// Per-stage counters of one streamed frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    /// Largest number of real elements held at once (windowed stages).
    pub peak_occupancy: usize,
    /// `P * W`, the line-buffer capacity (windowed stages).
    pub capacity: Option<usize>,
    pub elements_in: usize,
    pub elements_out: usize,
    /// Real and virtual positions processed, one per modeled cycle.
    pub events: usize,
    /// Real input elements consumed when the first output left the stage.
    pub first_output_at: Option<usize>,
}

struct Stage<V, A> {
    layer: usize,
    /// Geometry of arriving elements: channels per element, rows x cols of
    /// elements. Flatten keeps the geometry of its input.
    stream_in: Shape,
    kind: StageKind<V, A>,
    report: StageReport,
}

/// Logits (last stage's output in channel-major order) and counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamOutput<V> {
    pub logits: Vec<V>,
    pub stages: Vec<StageReport>,
    /// Largest per-stage event count: the modeled latency in cycles when
    /// every stage accepts one element per cycle.
    pub modeled_cycles: usize,
}

/// Streams one frame through a chain of stages, one element (a pixel vector
/// across channels) at a time in row-major order. Each element is pushed
/// through every stage it triggers before the next one is accepted.
pub struct StreamSession<'d, D: Datapath> {
    datapath: &'d mut D,
    stages: Vec<Stage<D::Value, D::Acc>>,
    output_shape: Shape,
    output: Vec<(usize, usize, Vec<D::Value>)>,
    next: (usize, usize),
}

impl<'d, D: Datapath> StreamSession<'d, D> {
    pub fn new(spec: &ModelSpec, datapath: &'d mut D) -> Result<Self> {
        spec.layer_shapes()?;
        let mut stages = Vec::with_capacity(spec.layers.len());
        let mut geom = spec.input;
        for (i, layer) in spec.layers.iter().enumerate() {
            let stream_in = geom;
            let window = |kernel: (usize, usize),
                          stride,
                          padding|
             -> Result<(LineBuffer<D::Value>, Shape)> {
                let g = WindowGeometry {
                    channels: stream_in.channels,
                    rows: stream_in.rows,
                    cols: stream_in.cols,
                    kernel,
                    stride,
                    padding,
                };
                let (r, c) = g.output_dims();
                Ok((LineBuffer::new(g)?, Shape::new(0, r, c)))
            };
            let (kind, out) = match &layer.kind {
                LayerKind::Conv(c) => {
                    let (b, s) = window(c.kernel, c.stride, c.padding)?;
                    (
                        StageKind::Window(b),
                        Shape::new(c.out_channels, s.rows, s.cols),
                    )
                }
                LayerKind::Pool(p) => {
                    let (b, s) = window(p.window, p.stride, 0)?;
                    (
                        StageKind::Window(b),
                        Shape::new(stream_in.channels, s.rows, s.cols),
                    )
                }
                LayerKind::Flatten => (StageKind::Flatten, stream_in),
                LayerKind::Dense { outputs } => {
                    (StageKind::Dense(Vec::new()), Shape::new(*outputs, 1, 1))
                }
            };
            let capacity = match &kind {
                StageKind::Window(b) => Some(b.capacity()),
                _ => None,
            };
            stages.push(Stage {
                layer: i,
                stream_in,
                kind,
                report: StageReport {
                    name: layer.name.clone(),
                    peak_occupancy: 0,
                    capacity,
                    elements_in: 0,
                    elements_out: 0,
                    events: 0,
                    first_output_at: None,
                },
            });
            geom = out;
        }
        if stages.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        Ok(Self {
            datapath,
            stages,
            output_shape: geom,
            output: Vec::new(),
            next: (0, 0),
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.stages[0].stream_in
    }

    /// Feeds the element at `(row, col)`.
    pub fn push(&mut self, row: usize, col: usize, values: Vec<D::Value>) -> Result<()> {
        let shape = self.input_shape();
        if self.next.0 >= shape.rows {
            return Err(Error::Protocol("more elements than the frame holds".into()));
        }
        if (row, col) != self.next {
            return Err(Error::Protocol(format!(
                "element ({row}, {col}) arrived, expected {:?}",
                self.next
            )));
        }
        if values.len() != shape.channels {
            return Err(Error::Protocol(format!(
                "element has {} channels, expected {}",
                values.len(),
                shape.channels
            )));
        }
        self.next = if col + 1 == shape.cols {
            (row + 1, 0)
        } else {
            (row, col + 1)
        };
        self.feed(0, row, col, values)
    }

    fn emit(&mut self, stage: usize, row: usize, col: usize, values: Vec<D::Value>) -> Result<()> {
        let r = &mut self.stages[stage].report;
        r.elements_out += 1;
        r.first_output_at.get_or_insert(r.elements_in);
        if stage + 1 == self.stages.len() {
            self.output.push((row, col, values));
            Ok(())
        } else {
            self.feed(stage + 1, row, col, values)
        }
    }

    fn step_window(&mut self, stage: usize, element: Option<&[D::Value]>) -> Result<()> {
        let st = &mut self.stages[stage];
        let StageKind::Window(buffer) = &mut st.kind else {
            unreachable!("windowed stage")
        };
        let (pr, pc) = buffer.cursor();
        let window = buffer.step(element)?;
        st.report.events = buffer.events;
        st.report.peak_occupancy = buffer.peak_occupancy;
        let g = buffer.geometry;
        if let Some(w) = window {
            let out = self.datapath.window(st.layer, &w)?;
            self.emit(
                stage,
                (pr + 1 - g.kernel.0) / g.stride,
                (pc + 1 - g.kernel.1) / g.stride,
                out,
            )?;
        }
        Ok(())
    }

    fn next_virtual(&self, stage: usize) -> bool {
        matches!(&self.stages[stage].kind, StageKind::Window(b) if b.next_is_virtual())
    }

    fn feed(&mut self, stage: usize, row: usize, col: usize, values: Vec<D::Value>) -> Result<()> {
        let st = &mut self.stages[stage];
        let geom = st.stream_in;
        st.report.elements_in += 1;
        let done = st.report.elements_in == geom.rows * geom.cols;
        match &mut st.kind {
            StageKind::Window(_) => {
                while self.next_virtual(stage) {
                    self.step_window(stage, None)?;
                }
                self.step_window(stage, Some(&values))?;
                if done {
                    while self.next_virtual(stage) {
                        self.step_window(stage, None)?;
                    }
                }
                Ok(())
            }
            StageKind::Flatten => {
                st.report.events += 1;
                self.emit(stage, row, col, values)
            }
            StageKind::Dense(acc) => {
                st.report.events += 1;
                let layer = st.layer;
                let mut acc = std::mem::take(acc);
                if acc.is_empty() {
                    acc = self.datapath.dense_start(layer)?;
                }
                let plane = geom.rows * geom.cols;
                for (ch, &v) in values.iter().enumerate() {
                    self.datapath
                        .dense_add(layer, &mut acc, ch * plane + row * geom.cols + col, v);
                }
                if done {
                    let out = self.datapath.dense_finish(layer, &acc)?;
                    self.emit(stage, 0, 0, out)
                } else {
                    self.stages[stage].kind = StageKind::Dense(acc);
                    Ok(())
                }
            }
        }
    }

    /// Checks that the whole frame arrived and returns the result.
    pub fn finish(self) -> Result<StreamOutput<D::Value>> {
        let shape = self.input_shape();
        if self.next != (shape.rows, 0) {
            return Err(Error::Protocol(format!(
                "stream ended early before element {:?}",
                self.next
            )));
        }
        let out = self.output_shape;
        if self.output.len() != out.rows * out.cols {
            return Err(Error::Protocol(format!(
                "last stage produced {} of {} elements",
                self.output.len(),
                out.rows * out.cols
            )));
        }
        let mut logits = vec![D::Value::default(); out.len()];
        for (r, c, values) in self.output {
            for (ch, v) in values.into_iter().enumerate() {
                logits[(ch * out.rows + r) * out.cols + c] = v;
            }
        }
        let stages: Vec<StageReport> = self.stages.into_iter().map(|s| s.report).collect();
        let modeled_cycles = stages.iter().map(|s| s.events).max().unwrap_or(0);
        Ok(StreamOutput {
            logits,
            stages,
            modeled_cycles,
        })
    }
}

/// Streams a channel-major frame (`data` laid out `[C][H][W]`).
pub fn stream_frame<D: Datapath>(
    spec: &ModelSpec,
    datapath: &mut D,
    shape: Shape,
    data: &[D::Value],
) -> Result<StreamOutput<D::Value>> {
    if shape != spec.input || data.len() != shape.len() {
        return Err(Error::Config(format!(
            "frame shape {shape} does not match model input {}",
            spec.input
        )));
    }
    let mut session = StreamSession::new(spec, datapath)?;
    let plane = shape.rows * shape.cols;
    for r in 0..shape.rows {
        for c in 0..shape.cols {
            let values = (0..shape.channels)
                .map(|ch| data[ch * plane + r * shape.cols + c])
                .collect();
            session.push(r, c, values)?;
        }
    }
    session.finish()
}
