//! `SAQM` quantized model files.
//!
//! ```text
//! "SAQM" | u16 version = 1 | u8 N | u8 bits | u8 F | u8 I | u16 layer count
//! per layer:
//!   u8 kind tag | u16 M | u16 N | u16 P | u16 Q | u16 S | u16 pad   (as in SACW)
//!   conv / dense only:
//!     i16 encoding bias
//!     bit stream, weights then biases in float layout order, per value:
//!       2-bit sign (00 zero, 01 positive, 11 negative)
//!       4-bit term count
//!       count codes of `bits` bits each
//!     padded with zero bits to a byte boundary
//! ```
//!
//! Bit fields are packed least significant bit first: the first field
//! occupies the low bits of the first byte. A term count field of four bits
//! limits files to at most 15 terms per value.

use super::encode::{decode_layer, encode_model, lossless_bits, LayerEncoding};
use super::fixed::FixedPointFrame;
use super::shift::{QuantConfig, QuantizedLayer, QuantizedModel, ShiftQuantParam};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::nn::sacw::{layer_header, read_header, SpecBuilder, TAG_CONV, TAG_DENSE};
use crate::nn::LayerKind;

pub const SAQM_MAGIC: &[u8; 4] = b"SAQM";
pub const SAQM_VERSION: u16 = 1;
pub const MAX_FILE_TERMS: usize = 15;

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    used: u32,
}

impl BitWriter {
    fn push(&mut self, value: u32, width: u32) {
        debug_assert!(width <= 32 && u64::from(value) < 1u64 << width);
        self.acc |= u64::from(value) << self.used;
        self.used += width;
        while self.used >= 8 {
            self.bytes.push(self.acc as u8);
            self.acc >>= 8;
            self.used -= 8;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.used > 0 {
            self.bytes.push(self.acc as u8);
        }
        self.bytes
    }
}

struct BitReader<'a, 'b> {
    src: &'b mut ByteReader<'a>,
    acc: u64,
    avail: u32,
}

impl<'a, 'b> BitReader<'a, 'b> {
    fn new(src: &'b mut ByteReader<'a>) -> Self {
        Self {
            src,
            acc: 0,
            avail: 0,
        }
    }

    fn take(&mut self, width: u32) -> Result<u32> {
        while self.avail < width {
            self.acc |= u64::from(self.src.u8()?) << self.avail;
            self.avail += 8;
        }
        let v = (self.acc & ((1u64 << width) - 1)) as u32;
        self.acc >>= width;
        self.avail -= width;
        Ok(v)
    }
}

fn small(v: u32, name: &str) -> Result<u8> {
    u8::try_from(v).map_err(|_| Error::Format(format!("{name} = {v} does not fit in u8")))
}

/// Serializes `q`. An unencoded model is first encoded with the narrowest
/// width that keeps every layer lossless.
pub fn write_saqm(q: &QuantizedModel) -> Result<Vec<u8>> {
    let encoded;
    let q = match q.bits {
        Some(_) => q,
        None => {
            let bits = q
                .layers
                .iter()
                .map(|l| lossless_bits(&l.magnitudes()))
                .max()
                .unwrap_or(1);
            encoded = encode_model(q, bits)?;
            &encoded
        }
    };
    let bits = q.bits.expect("encoded above");
    let shapes = q.spec.layer_shapes()?;
    let mut w = ByteWriter::default();
    w.bytes(SAQM_MAGIC);
    w.u16(SAQM_VERSION);
    w.u8(small(q.config.n as u32, "N")?);
    w.u8(bits);
    w.u8(small(q.config.frame.fraction_bits, "F")?);
    w.u8(small(q.config.frame.integer_bits, "I")?);
    w.u16(crate::binio::u16_field(q.spec.layers.len(), "layer count")?);
    for (i, layer) in q.spec.layers.iter().enumerate() {
        let (tag, header) = layer_header(layer, shapes[i], shapes[i + 1])?;
        w.u8(tag);
        header.iter().for_each(|&h| w.u16(h));
        if !matches!(layer.kind, LayerKind::Conv(_) | LayerKind::Dense { .. }) {
            continue;
        }
        let ql = q
            .layer(i)
            .ok_or_else(|| Error::Format(format!("layer {} was not quantized", layer.name)))?;
        let enc = ql
            .encoding
            .as_ref()
            .ok_or_else(|| Error::Format(format!("layer {} is not encoded", ql.name)))?;
        w.i16(i16::from(enc.bias));
        let mut bw = BitWriter::default();
        for p in ql.params() {
            if p.shifts.len() > MAX_FILE_TERMS {
                return Err(Error::Format(format!(
                    "layer {}: {} terms exceed the file limit of {MAX_FILE_TERMS}",
                    ql.name,
                    p.shifts.len()
                )));
            }
            bw.push(
                match p.sign {
                    0 => 0b00,
                    1 => 0b01,
                    _ => 0b11,
                },
                2,
            );
            bw.push(p.shifts.len() as u32, 4);
            for &k in &p.shifts {
                bw.push(u32::from(k - enc.bias), u32::from(bits));
            }
        }
        w.bytes(&bw.finish());
    }
    Ok(w.buf)
}

/// Parses a `SAQM` file; input rows and columns are not stored.
pub fn read_saqm(bytes: &[u8], rows: usize, cols: usize) -> Result<QuantizedModel> {
    let mut r = ByteReader::new(bytes, "SAQM");
    r.magic(SAQM_MAGIC)?;
    let version = r.u16()?;
    if version != SAQM_VERSION {
        return Err(Error::Format(format!(
            "SAQM: unsupported version {version}"
        )));
    }
    let n = r.u8()? as usize;
    let bits = r.u8()?;
    let frame = FixedPointFrame::new(u32::from(r.u8()?), u32::from(r.u8()?))
        .map_err(|e| Error::Format(e.to_string()))?;
    if !(1..=8).contains(&bits) || n == 0 {
        return Err(Error::Format(format!("SAQM: bad N={n} or bits={bits}")));
    }
    let count = r.u16()? as usize;
    let mut builder = SpecBuilder::new();
    let mut pending = Vec::new();
    for i in 0..count {
        let (tag, h) = read_header(&mut r)?;
        builder.push(tag, h)?;
        let kind = tag & 0x0f;
        if kind != TAG_CONV && kind != TAG_DENSE {
            continue;
        }
        let [m, nn, p, q, ..] = h.map(usize::from);
        let weight_count = m * nn * p * q;
        let bias = u8::try_from(r.i16()?)
            .map_err(|_| Error::Format("SAQM: negative encoding bias".into()))?;
        let mut br = BitReader::new(&mut r);
        let mut params = Vec::with_capacity(weight_count + m);
        let mut codes = Vec::new();
        for _ in 0..weight_count + m {
            let sign = match br.take(2)? {
                0b00 => 0,
                0b01 => 1,
                0b11 => -1,
                other => return Err(Error::Format(format!("SAQM: bad sign field {other:#b}"))),
            };
            let terms = br.take(4)? as usize;
            let mut c = Vec::with_capacity(terms);
            for _ in 0..terms {
                c.push(br.take(u32::from(bits))? as u8);
            }
            let shifts = decode_layer(bias, &c);
            codes.extend(c);
            let param = ShiftQuantParam { sign, shifts };
            param.validate(frame)?;
            params.push(param);
        }
        let biases = params.split_off(weight_count);
        pending.push((
            i,
            params,
            biases,
            LayerEncoding {
                bits,
                bias,
                codes,
                clamp_count: 0,
            },
        ));
    }
    r.finish()?;
    let spec = builder.finish(rows, cols)?;
    let layers = pending
        .into_iter()
        .map(|(i, weights, biases, enc)| QuantizedLayer {
            layer: i,
            name: spec.layers[i].name.clone(),
            weights,
            biases,
            encoding: Some(enc),
        })
        .collect();
    Ok(QuantizedModel {
        spec,
        config: QuantConfig {
            n,
            frame,
            quantize_biases: true,
        },
        bits: Some(bits),
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{fold_model, ModelParams, ModelSpec};
    use crate::par::ExecMode;
    use crate::quant::{dequantize_model, shift_quantize_model};
    use crate::rng;

    fn quantized(n: usize) -> QuantizedModel {
        let spec = ModelSpec::reduced(8, 6);
        let p = ModelParams::init(&spec, &mut rng::stream(5, "init")).unwrap();
        let (spec, p) = fold_model(&spec, &p).unwrap();
        shift_quantize_model(&spec, &p, &QuantConfig::new(n), ExecMode::Sequential).unwrap()
    }

    #[test]
    fn bit_packing_is_lsb_first() {
        let mut w = BitWriter::default();
        w.push(0b01, 2);
        w.push(0b0011, 4);
        w.push(0b101, 3);
        assert_eq!(w.finish(), vec![0b0100_1101, 0b0000_0001]);
    }

    #[test]
    fn round_trip_lossless() {
        let q = quantized(3);
        let bytes = write_saqm(&q).unwrap();
        let back = read_saqm(&bytes, 8, 6).unwrap();
        assert_eq!(back.spec, q.spec);
        assert_eq!(
            dequantize_model(&back).unwrap(),
            dequantize_model(&q).unwrap()
        );
        assert_eq!(write_saqm(&back).unwrap(), bytes);
        assert!(read_saqm(&bytes[..bytes.len() - 1], 8, 6).is_err());
    }

    #[test]
    fn lossy_encoding_survives_bit_exactly() {
        let e = encode_model(&quantized(4), 2).unwrap();
        assert!(e.clamp_count() > 0);
        let bytes = write_saqm(&e).unwrap();
        let back = read_saqm(&bytes, 8, 6).unwrap();
        assert_eq!(
            dequantize_model(&back).unwrap(),
            dequantize_model(&e).unwrap()
        );
        assert_eq!(write_saqm(&back).unwrap(), bytes);
    }

    #[test]
    fn too_many_terms_rejected() {
        let mut q = quantized(18);
        q.layers[0].weights[0] =
            crate::quant::shift_quantize_param(4.0 - 2f64.powi(-16), 18, q.config.frame).unwrap();
        assert_eq!(q.layers[0].weights[0].shifts.len(), 18);
        assert!(matches!(write_saqm(&q), Err(Error::Format(_))));
    }
}
