use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{count_report, ModelSpec};

pub const BASELINE_BITS: u32 = 32;
/// Sign and term-count fields stored per weight in `SAQM`.
pub const SIGN_BITS: u32 = 2;
pub const COUNT_BITS: u32 = 4;
pub const LAYER_BIAS_BITS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub n: u32,
    pub bits: u32,
    pub weight_count: usize,
    /// `N * bits`, the headline storage per weight.
    pub stored_bits_per_weight: u32,
    pub baseline_bits: u32,
    /// `N * bits / 32`.
    pub ratio: f64,
    pub ratio_percent: f64,
    /// True when the quantized form is larger than 32-bit floats.
    pub exceeds_baseline: bool,
    pub sign_bits_per_weight: u32,
    pub count_bits_per_weight: u32,
    pub layer_bias_bits_total: u64,
    /// Everything above, over all weights, relative to the float model.
    pub ratio_with_overhead: f64,
}

/// Storage of a model whose weights keep `n` terms of `bits` bits each.
/// Weight count and layer count come from `spec` with batchnorm folded.
pub fn compression_report(spec: &ModelSpec, n: u32, bits: u32) -> Result<CompressionReport> {
    if n == 0 || bits == 0 {
        return Err(Error::Config("N and bits must be positive".into()));
    }
    let folded = spec.clone().with_batchnorm(false);
    let weight_count = count_report(&folded)?.param_count;
    let layers = folded
        .layers
        .iter()
        .filter(|l| {
            matches!(
                l.kind,
                crate::nn::LayerKind::Conv(_) | crate::nn::LayerKind::Dense { .. }
            )
        })
        .count() as u64;
    let stored = n * bits;
    let ratio = f64::from(stored) / f64::from(BASELINE_BITS);
    let layer_bias_bits_total = layers * u64::from(LAYER_BIAS_BITS);
    let total = weight_count as f64 * f64::from(stored + SIGN_BITS + COUNT_BITS)
        + layer_bias_bits_total as f64;
    Ok(CompressionReport {
        n,
        bits,
        weight_count,
        stored_bits_per_weight: stored,
        baseline_bits: BASELINE_BITS,
        ratio,
        ratio_percent: ratio * 100.0,
        exceeds_baseline: ratio > 1.0,
        sign_bits_per_weight: SIGN_BITS,
        count_bits_per_weight: COUNT_BITS,
        layer_bias_bits_total,
        ratio_with_overhead: total / (weight_count as f64 * f64::from(BASELINE_BITS)),
    })
}
