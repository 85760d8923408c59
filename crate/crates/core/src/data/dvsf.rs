//! `DVSF` frame files and the CSV alternative.
//!
//! DVSF layout, little-endian: magic `DVSF`, u16 version (1), u16 rows,
//! u16 cols, u8 label, then rows*cols f32 values row-major (row = time).
//!
//! CSV layout: header `label,r0c0,r0c1,...`, then one sample per line.

use crate::binio::{u16_field, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const DVSF_MAGIC: &[u8; 4] = b"DVSF";
pub const DVSF_VERSION: u16 = 1;

fn single_channel(frame: &Tensor) -> Result<Shape> {
    let s = frame.shape();
    if s.channels != 1 {
        return Err(Error::Config(format!(
            "frame must have one channel, got {s}"
        )));
    }
    Ok(s)
}

pub fn write_dvsf(label: usize, frame: &Tensor) -> Result<Vec<u8>> {
    let s = single_channel(frame)?;
    let label = u8::try_from(label)
        .map_err(|_| Error::Format(format!("label {label} does not fit in u8")))?;
    let mut w = ByteWriter::default();
    w.bytes(DVSF_MAGIC);
    w.u16(DVSF_VERSION);
    w.u16(u16_field(s.rows, "rows")?);
    w.u16(u16_field(s.cols, "cols")?);
    w.u8(label);
    for &v in frame.data() {
        w.f32(v as f32);
    }
    Ok(w.buf)
}

/// Returns the label and a 1-channel frame.
pub fn read_dvsf(bytes: &[u8]) -> Result<(usize, Tensor)> {
    let mut r = ByteReader::new(bytes, "DVSF");
    r.magic(DVSF_MAGIC)?;
    let version = r.u16()?;
    if version != DVSF_VERSION {
        return Err(Error::Format(format!(
            "DVSF: unsupported version {version}"
        )));
    }
    let rows = r.u16()? as usize;
    let cols = r.u16()? as usize;
    let label = r.u8()? as usize;
    let shape = Shape::new(1, rows, cols);
    let data = (0..shape.len())
        .map(|_| r.f32().map(f64::from))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((label, Tensor::new(shape, data)?))
}

pub fn csv_header(rows: usize, cols: usize) -> String {
    let mut h = String::from("label");
    for r in 0..rows {
        for c in 0..cols {
            h.push_str(&format!(",r{r}c{c}"));
        }
    }
    h
}

/// Parses a CSV of frames. The header fixes the frame geometry; the last
/// header column must be `r{rows-1}c{cols-1}`.
pub fn parse_csv(text: &str) -> Result<Vec<(usize, Tensor)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let cols_h: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols_h.first() != Some(&"label") || cols_h.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with `label`".into(),
        });
    }
    let last = cols_h[cols_h.len() - 1];
    let (rows, cols) = last
        .strip_prefix('r')
        .and_then(|s| s.split_once('c'))
        .and_then(|(r, c)| Some((r.parse::<usize>().ok()? + 1, c.parse::<usize>().ok()? + 1)))
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("bad last header column {last:?}"),
        })?;
    if csv_header(rows, cols) != cols_h.join(",") {
        return Err(Error::Parse {
            line: 1,
            message: format!("header does not describe a {rows}x{cols} frame"),
        });
    }
    let shape = Shape::new(1, rows, cols);
    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let mut fields = line.split(',').map(str::trim);
        let label = fields
            .next()
            .and_then(|f| f.parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: "bad label".into(),
            })?;
        let data = fields
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if data.len() != shape.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} values, found {}", shape.len(), data.len()),
            });
        }
        out.push((label, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn write_csv(samples: &[(usize, &Tensor)]) -> Result<String> {
    let Some((_, first)) = samples.first() else {
        return Ok(String::new());
    };
    let s = single_channel(first)?;
    let mut out = csv_header(s.rows, s.cols);
    out.push('\n');
    for (label, frame) in samples {
        if frame.shape() != s {
            return Err(Error::Config(format!(
                "mixed frame shapes {s} and {}",
                frame.shape()
            )));
        }
        out.push_str(&label.to_string());
        for v in frame.data() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}
