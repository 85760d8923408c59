use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    /// Round the inference time to three decimals of a millisecond before
    /// dividing the frame period by it.
    #[default]
    Millis,
    /// Full precision throughout.
    Exact,
}

pub const DEFAULT_CYCLES: u64 = 25112;
pub const DEFAULT_CLOCK_HZ: f64 = 303e6;
pub const DEFAULT_FRAME_PERIOD_S: f64 = 0.256;
pub const DEFAULT_FRAME_SPAN_M: f64 = 12.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub cycles: u64,
    pub clock_hz: f64,
    /// `cycles / clock_hz`, after rounding in millis mode.
    pub inference_time_s: f64,
    pub inference_time_ms: f64,
    pub frame_period_s: f64,
    pub frames_per_period: u64,
    pub frame_span_m: f64,
    pub realtime_fiber_m: f64,
    pub rounding: Rounding,
}

pub fn throughput_report(
    cycles: u64,
    clock_hz: f64,
    frame_period_s: f64,
    frame_span_m: f64,
    rounding: Rounding,
) -> Result<ThroughputReport> {
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if cycles == 0 || !positive(clock_hz) || !positive(frame_period_s) || !positive(frame_span_m) {
        return Err(Error::Domain(
            "cycles, clock, frame period and span must be positive".into(),
        ));
    }
    let exact_s = cycles as f64 / clock_hz;
    let inference_time_s = match rounding {
        Rounding::Exact => exact_s,
        Rounding::Millis => {
            let ms = (exact_s * 1e3 * 1e3).round() / 1e3;
            if ms == 0.0 {
                return Err(Error::Domain(format!(
                    "inference time {exact_s} s rounds to 0.000 ms"
                )));
            }
            ms / 1e3
        }
    };
    // guards the exact-multiple case against a quotient like 0.9999999999
    let frames_per_period = (frame_period_s / inference_time_s * (1.0 + 1e-12)).floor() as u64;
    Ok(ThroughputReport {
        cycles,
        clock_hz,
        inference_time_s,
        inference_time_ms: inference_time_s * 1e3,
        frame_period_s,
        frames_per_period,
        frame_span_m,
        realtime_fiber_m: frames_per_period as f64 * frame_span_m,
        rounding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn millis_and_exact() {
        let p = throughput_report(25112, 303e6, 0.256, 12.5, Rounding::Millis).unwrap();
        assert_eq!(p.inference_time_ms, 0.083);
        assert_eq!(p.frames_per_period, 3084);
        assert_eq!(p.realtime_fiber_m, 38550.0);
        let e = throughput_report(25112, 303e6, 0.256, 12.5, Rounding::Exact).unwrap();
        assert!((e.inference_time_s * 1e6 - 82.877).abs() < 1e-3);
        assert_eq!(e.frames_per_period, 3088);
        assert_eq!(e.realtime_fiber_m, 38600.0);
    }

    #[test]
    fn boundary_and_monotone() {
        let b = throughput_report(77_568_000, 303e6, 0.256, 12.5, Rounding::Exact).unwrap();
        assert_eq!((b.frames_per_period, b.realtime_fiber_m), (1, 12.5));
        let mut last = u64::MAX;
        for c in (1000..200_000).step_by(997) {
            let r = throughput_report(c, 303e6, 0.256, 12.5, Rounding::Exact).unwrap();
            assert!(r.frames_per_period <= last);
            assert_eq!(r.realtime_fiber_m, r.frames_per_period as f64 * 12.5);
            last = r.frames_per_period;
        }
        assert!(throughput_report(0, 1.0, 1.0, 1.0, Rounding::Exact).is_err());
    }
}
