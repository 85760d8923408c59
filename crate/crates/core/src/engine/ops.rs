//! Integer datapath primitives. Data values are only ever shifted, added,
//! negated and compared here; a test checks the file for multiplications.

/// Largest activation magnitude, `2^31 - 1`.
pub const ACT_MAX: i64 = i32::MAX as i64;

/// One weight as the left shifts applied to an activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntWeight {
    pub negative: bool,
    pub lshifts: Vec<u8>,
}

impl IntWeight {
    /// `sign * sum(act << s)` over the weight's shifts.
    #[inline]
    pub fn apply(&self, act: i32) -> i64 {
        let a = i64::from(act);
        let mut sum = 0i64;
        for &s in &self.lshifts {
            sum += a << s;
        }
        if self.negative {
            -sum
        } else {
            sum
        }
    }

    /// The weight's magnitude as an integer, `sum(1 << s)`.
    pub fn magnitude(&self) -> u64 {
        self.lshifts.iter().fold(0, |acc, &s| acc + (1u64 << s))
    }
}

/// Round-half-to-even arithmetic right shift.
#[inline]
pub fn shift_round_even(v: i64, s: u32) -> i64 {
    if s == 0 {
        return v;
    }
    let q = v >> s;
    let r = v - (q << s);
    let half = 1i64 << (s - 1);
    if r > half || (r == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Clamps to `[-(2^31 - 1), 2^31 - 1]`; the flag reports a clamp.
#[inline]
pub fn saturate(v: i64) -> (i32, bool) {
    if v > ACT_MAX {
        (ACT_MAX as i32, true)
    } else if v < -ACT_MAX {
        (-(ACT_MAX as i32), true)
    } else {
        (v as i32, false)
    }
}

/// Rounded mean of a window whose size is `1 << log2_len`.
#[inline]
pub fn mean_shift(sum: i64, log2_len: u32) -> i32 {
    if log2_len == 0 {
        return sum as i32;
    }
    ((sum + (1i64 << (log2_len - 1))) >> log2_len) as i32
}

#[inline]
pub fn relu(v: i32) -> i32 {
    v.max(0)
}
