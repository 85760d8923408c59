use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unsigned fixed-point frame for weight magnitudes: `integer_bits` above
/// the binary point, `fraction_bits` below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointFrame {
    pub fraction_bits: u32,
    pub integer_bits: u32,
}

impl Default for FixedPointFrame {
    fn default() -> Self {
        Self {
            fraction_bits: 16,
            integer_bits: 2,
        }
    }
}

impl FixedPointFrame {
    pub fn new(fraction_bits: u32, integer_bits: u32) -> Result<Self> {
        let f = Self {
            fraction_bits,
            integer_bits,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width() > 31 || self.width() == 0 {
            return Err(Error::Config(format!(
                "fixed-point frame F={} I={} must have 1..=31 bits",
                self.fraction_bits, self.integer_bits
            )));
        }
        Ok(())
    }

    /// Total magnitude bits, `F + I`.
    pub fn width(&self) -> u32 {
        self.fraction_bits + self.integer_bits
    }

    /// `round_half_even(|w| * 2^F)`; errors when the result needs more than
    /// `F + I` bits.
    pub fn to_fixed(&self, w: f64) -> Result<u32> {
        self.validate()?;
        if !w.is_finite() {
            return Err(Error::Range(format!("{w} is not finite")));
        }
        let scaled = (w.abs() * f64::from(1u32 << self.fraction_bits)).round_ties_even();
        if scaled >= f64::from(1u32 << self.width()) {
            return Err(Error::Range(format!(
                "|{w}| does not fit {} integer bits at {} fraction bits",
                self.integer_bits, self.fraction_bits
            )));
        }
        Ok(scaled as u32)
    }

    /// Real value of a fixed-point magnitude.
    pub fn value(&self, fixed: u32) -> f64 {
        f64::from(fixed) / f64::from(1u32 << self.fraction_bits)
    }
}

/// Exponents `e` of the set bits of the rounded fixed-point `|w|`, most
/// significant first; `|fix(w)| = sum 2^e`.
pub fn fixed_point_decompose(w: f64, frame: FixedPointFrame) -> Result<Vec<i32>> {
    let fixed = frame.to_fixed(w)?;
    let f = frame.fraction_bits as i32;
    Ok((0..frame.width() as i32)
        .rev()
        .filter(|b| fixed >> b & 1 == 1)
        .map(|b| b - f)
        .collect())
}
