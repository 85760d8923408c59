use serde::{Deserialize, Serialize};

use super::shift::{QuantizedModel, ShiftQuantParam};
use crate::error::{Error, Result};

pub const MAX_BITS: u8 = 8;

/// Biased binary encoding of one layer's shift magnitudes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEncoding {
    pub bits: u8,
    /// Smallest magnitude in the layer.
    pub bias: u8,
    /// `magnitude - bias`, saturated at `2^bits - 1`.
    pub codes: Vec<u8>,
    pub clamp_count: usize,
}

fn check_bits(bits: u8) -> Result<()> {
    if !(1..=MAX_BITS).contains(&bits) {
        return Err(Error::Config(format!(
            "encoding width {bits} outside 1..={MAX_BITS}"
        )));
    }
    Ok(())
}

pub fn encode_layer(magnitudes: &[u8], bits: u8) -> Result<LayerEncoding> {
    check_bits(bits)?;
    let bias = *magnitudes
        .iter()
        .min()
        .ok_or_else(|| Error::Config("cannot encode an empty layer".into()))?;
    let top = ((1u16 << bits) - 1) as u8;
    let mut clamp_count = 0;
    let codes = magnitudes
        .iter()
        .map(|&m| {
            let c = m - bias;
            if c > top {
                clamp_count += 1;
                top
            } else {
                c
            }
        })
        .collect();
    Ok(LayerEncoding {
        bits,
        bias,
        codes,
        clamp_count,
    })
}

pub fn decode_layer(bias: u8, codes: &[u8]) -> Vec<u8> {
    codes.iter().map(|&c| c + bias).collect()
}

/// Smallest width that encodes `magnitudes` without clamping.
pub fn lossless_bits(magnitudes: &[u8]) -> u8 {
    let spread = match (magnitudes.iter().min(), magnitudes.iter().max()) {
        (Some(lo), Some(hi)) => hi - lo,
        _ => 0,
    };
    (8 - spread.leading_zeros() as u8).max(1)
}

/// Encodes every layer with `bits` and replaces each layer's shift lists by
/// their decoded (possibly clamped) values. Layers without any nonzero
/// weight get bias 0 and no codes.
pub fn encode_model(q: &QuantizedModel, bits: u8) -> Result<QuantizedModel> {
    check_bits(bits)?;
    let mut out = q.clone();
    out.bits = Some(bits);
    for layer in &mut out.layers {
        let mags = layer.magnitudes();
        let enc = if mags.is_empty() {
            LayerEncoding {
                bits,
                bias: 0,
                codes: Vec::new(),
                clamp_count: 0,
            }
        } else {
            encode_layer(&mags, bits)?
        };
        let decoded = decode_layer(enc.bias, &enc.codes);
        let mut it = decoded.into_iter();
        let refill = |p: &mut ShiftQuantParam, it: &mut std::vec::IntoIter<u8>| {
            for k in p.shifts.iter_mut() {
                *k = it.next().expect("one code per magnitude");
            }
        };
        for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
            refill(p, &mut it);
        }
        layer.encoding = Some(enc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{fold_model, ModelParams, ModelSpec};
    use crate::par::ExecMode;
    use crate::quant::{dequantize_model, shift_quantize_model, QuantConfig};
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let e = encode_layer(&[1, 3, 4, 8], 3).unwrap();
        assert_eq!(
            (e.bias, e.codes.clone(), e.clamp_count),
            (1, vec![0, 2, 3, 7], 0)
        );
        assert_eq!(decode_layer(1, &e.codes), vec![1, 3, 4, 8]);
        let e = encode_layer(&[4, 4, 4], 1).unwrap();
        assert_eq!((e.bias, e.codes, e.clamp_count), (4, vec![0, 0, 0], 0));
        let e = encode_layer(&[1, 12], 3).unwrap();
        assert_eq!((e.codes.clone(), e.clamp_count), (vec![0, 7], 1));
        assert_eq!(decode_layer(e.bias, &e.codes), vec![1, 8]);
        assert_eq!(decode_layer(5, &[0]), vec![5]);
        assert!(encode_layer(&[], 3).is_err());
        assert!(encode_layer(&[1], 0).is_err());
        assert!(encode_layer(&[1], 9).is_err());
    }

    #[test]
    fn lossless_width() {
        assert_eq!(lossless_bits(&[3, 3]), 1);
        assert_eq!(lossless_bits(&[1, 8]), 3);
        assert_eq!(lossless_bits(&[1, 9]), 4);
        assert_eq!(lossless_bits(&[1, 18]), 5);
    }

    #[test]
    fn model_encoding_is_lossless_at_wide_bits() {
        let spec = ModelSpec::reduced(8, 6);
        let p = ModelParams::init(&spec, &mut rng::stream(3, "init")).unwrap();
        let (spec, p) = fold_model(&spec, &p).unwrap();
        let q =
            shift_quantize_model(&spec, &p, &QuantConfig::new(3), ExecMode::Sequential).unwrap();
        let e = encode_model(&q, 5).unwrap();
        assert_eq!(e.clamp_count(), 0);
        assert_eq!(dequantize_model(&e).unwrap(), dequantize_model(&q).unwrap());
        let narrow = encode_model(&q, 1).unwrap();
        assert!(narrow.clamp_count() > 0);
        assert_ne!(
            dequantize_model(&narrow).unwrap(),
            dequantize_model(&q).unwrap()
        );
    }

    proptest! {
        #[test]
        fn clamp_count_iff_lossy(mags in prop::collection::vec(1u8..=18, 1..40), bits in 1u8..=8) {
            let e = encode_layer(&mags, bits).unwrap();
            let lossless = decode_layer(e.bias, &e.codes) == mags;
            prop_assert_eq!(lossless, e.clamp_count == 0);
            let spread = mags.iter().max().unwrap() - mags.iter().min().unwrap();
            prop_assert_eq!(u32::from(spread) < (1u32 << bits), lossless);
            prop_assert!(e.codes.iter().all(|&c| u32::from(c) < (1u32 << bits)));
        }
    }
}
