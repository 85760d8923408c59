use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a windowed stage on its zero-padded input grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGeometry {
    pub channels: usize,
    /// Real input rows and columns.
    pub rows: usize,
    pub cols: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl WindowGeometry {
    pub fn padded_rows(&self) -> usize {
        self.rows + 2 * self.padding
    }

    pub fn padded_cols(&self) -> usize {
        self.cols + 2 * self.padding
    }

    /// Real coordinates of padded position `(pr, pc)`, if it is not padding.
    pub fn real(&self, pr: usize, pc: usize) -> Option<(usize, usize)> {
        let (r, c) = (pr.checked_sub(self.padding)?, pc.checked_sub(self.padding)?);
        (r < self.rows && c < self.cols).then_some((r, c))
    }

    /// Whether the window ending at padded `(pr, pc)` is an output position.
    pub fn completes_window(&self, pr: usize, pc: usize) -> bool {
        let (p, q) = self.kernel;
        pr + 1 >= p
            && pc + 1 >= q
            && (pr + 1 - p) % self.stride == 0
            && (pc + 1 - q) % self.stride == 0
    }

    pub fn output_dims(&self) -> (usize, usize) {
        let (p, q) = self.kernel;
        (
            (self.padded_rows() - p) / self.stride + 1,
            (self.padded_cols() - q) / self.stride + 1,
        )
    }
}

/// Row-major line buffer over real elements.
///
/// Storage is a ring of `P` rows by `W` real columns per channel, indexed
/// by `row mod P`. Padding positions are injected as virtual elements: they
/// advance the cursor but are never stored, and read back as zero.
#[derive(Debug, Clone)]
pub struct LineBuffer<T> {
    pub geometry: WindowGeometry,
    ring: Vec<T>,
    /// Next padded position expected.
    cursor: (usize, usize),
    last_real: Option<(usize, usize)>,
    pub real_in: usize,
    pub events: usize,
    pub peak_occupancy: usize,
}

impl<T: Copy + Default> LineBuffer<T> {
    pub fn new(geometry: WindowGeometry) -> Result<Self> {
        let (p, q) = geometry.kernel;
        if p == 0 || q == 0 || geometry.stride == 0 || geometry.channels == 0 {
            return Err(Error::Config(
                "line buffer needs positive window, stride and channels".into(),
            ));
        }
        if geometry.padded_rows() < p || geometry.padded_cols() < q {
            return Err(Error::Config("window larger than padded input".into()));
        }
        Ok(Self {
            geometry,
            ring: vec![T::default(); p * geometry.cols * geometry.channels],
            cursor: (0, 0),
            last_real: None,
            real_in: 0,
            events: 0,
            peak_occupancy: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.geometry.kernel.0 * self.geometry.cols
    }

    pub fn cursor(&self) -> (usize, usize) {
        self.cursor
    }

    pub fn is_complete(&self) -> bool {
        self.cursor.0 == self.geometry.padded_rows()
    }

    /// Whether the next expected position is padding.
    pub fn next_is_virtual(&self) -> bool {
        !self.is_complete() && self.geometry.real(self.cursor.0, self.cursor.1).is_none()
    }

    fn slot(&self, r: usize, c: usize, ch: usize) -> usize {
        ((r % self.geometry.kernel.0) * self.geometry.cols + c) * self.geometry.channels + ch
    }

    /// Real elements a future window may still read: the current row so far
    /// plus up to `P - 1` rows above it.
    fn occupancy(&self) -> usize {
        self.last_real.map_or(0, |(r, c)| {
            r.min(self.geometry.kernel.0 - 1) * self.geometry.cols + c + 1
        })
    }

    /// Consumes the next element (`None` for a padding position) and returns
    /// the `[N][P][Q]` window when one completes here.
    pub fn step(&mut self, element: Option<&[T]>) -> Result<Option<Vec<T>>> {
        let g = self.geometry;
        if self.is_complete() {
            return Err(Error::Protocol("element after the end of the frame".into()));
        }
        let (pr, pc) = self.cursor;
        match (g.real(pr, pc), element) {
            (Some((r, c)), Some(values)) => {
                if values.len() != g.channels {
                    return Err(Error::Protocol(format!(
                        "element has {} channels, expected {}",
                        values.len(),
                        g.channels
                    )));
                }
                for (ch, &v) in values.iter().enumerate() {
                    let s = self.slot(r, c, ch);
                    self.ring[s] = v;
                }
                self.real_in += 1;
                self.last_real = Some((r, c));
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(Error::Protocol(format!(
                    "padding injected at real position ({pr}, {pc})"
                )))
            }
            (None, Some(_)) => {
                return Err(Error::Protocol(format!(
                    "real element at padding position ({pr}, {pc})"
                )))
            }
        }
        self.events += 1;
        self.cursor = if pc + 1 == g.padded_cols() {
            (pr + 1, 0)
        } else {
            (pr, pc + 1)
        };
        self.peak_occupancy = self.peak_occupancy.max(self.occupancy());
        debug_assert!(self.occupancy() <= self.capacity());
        if !g.completes_window(pr, pc) {
            return Ok(None);
        }
        let (p, q) = g.kernel;
        let mut window = Vec::with_capacity(g.channels * p * q);
        for ch in 0..g.channels {
            for i in 0..p {
                for j in 0..q {
                    let v = match g.real(pr + 1 - p + i, pc + 1 - q + j) {
                        Some((r, c)) => self.ring[self.slot(r, c, ch)],
                        None => T::default(),
                    };
                    window.push(v);
                }
            }
        }
        Ok(Some(window))
    }
}

/// Start-condition counts for a `P x Q` window with stride `S` on rows of
/// `W` elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferRequirement {
    /// `(P - 1 - S) * W + Q`, reported as is even when not positive.
    pub stride_formula: i64,
    /// `(P - 1) * W + Q`: elements consumed when the first unpadded window
    /// completes.
    pub functional_minimum: usize,
    pub warning: Option<String>,
}

pub fn buffer_requirement(p: usize, s: usize, w: usize, q: usize) -> Result<BufferRequirement> {
    if p == 0 || s == 0 || w == 0 || q == 0 {
        return Err(Error::Config("P, S, W and Q must be positive".into()));
    }
    let stride_formula = (p as i64 - 1 - s as i64) * w as i64 + q as i64;
    let warning = (stride_formula <= 0)
        .then(|| format!("formula gives {stride_formula}, not a usable buffer size"));
    Ok(BufferRequirement {
        stride_formula,
        functional_minimum: (p - 1) * w + q,
        warning,
    })
}
