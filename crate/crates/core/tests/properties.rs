use proptest::prelude::*;
use shiftadd_core::nn::sacw::{read_sacw, write_sacw};
use shiftadd_core::nn::{argmax, fold_model, softmax_temperature, ModelParams, ModelSpec};
use shiftadd_core::quant::{
    dequantize_model, encode_model, fixed_point_decompose, read_saqm, shift_quantize_model,
    shift_quantize_param, write_saqm, FixedPointFrame, QuantConfig,
};
use shiftadd_core::stream::{throughput_report, Rounding};
use shiftadd_core::{rng, ExecMode, Shape, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn quantization_is_idempotent(w in -3.9f64..3.9, n in 1usize..=18, f in 4u32..=16) {
        let frame = FixedPointFrame::new(f, 2).unwrap();
        let q = shift_quantize_param(w, n, frame).unwrap();
        let again = shift_quantize_param(q.value(frame), n, frame).unwrap();
        prop_assert_eq!(again, q);
    }

    #[test]
    fn truncation_underestimates_within_last_kept_term(w in -3.99f64..3.99, n in 1usize..=18) {
        let frame = FixedPointFrame::default();
        let fixed = frame.value(frame.to_fixed(w).unwrap());
        let q = shift_quantize_param(w, n, frame).unwrap();
        let kept = q.value(frame).abs();
        prop_assert!(kept <= fixed);
        let exps = fixed_point_decompose(w, frame).unwrap();
        if exps.len() > n {
            prop_assert!(fixed - kept < 2f64.powi(exps[n - 1]));
        } else {
            prop_assert_eq!(kept, fixed);
        }
        prop_assert!(q.shifts.windows(2).all(|p| p[0] < p[1]));
        prop_assert_eq!(q.sign == 0, q.shifts.is_empty());
    }

    #[test]
    fn tempered_softmax_keeps_argmax(x in prop::collection::vec(-30.0f64..30.0, 2..8), t in 0.1f64..20.0) {
        prop_assert_eq!(argmax(&softmax_temperature(&x, t).unwrap()), argmax(&x));
    }

    #[test]
    fn throughput_identities(cycles in 1u64..200_000, mhz in 50.0f64..500.0, exact in any::<bool>()) {
        let rounding = if exact { Rounding::Exact } else { Rounding::Millis };
        if let Ok(r) = throughput_report(cycles, mhz * 1e6, 0.256, 12.5, rounding) {
            let ratio = r.frame_period_s / r.inference_time_s;
            prop_assert!((r.frames_per_period as f64) <= ratio * (1.0 + 1e-9));
            prop_assert!((r.frames_per_period as f64 + 1.0) > ratio);
            prop_assert_eq!(r.realtime_fiber_m, r.frames_per_period as f64 * 12.5);
            if exact {
                prop_assert_eq!(r.inference_time_s, cycles as f64 / (mhz * 1e6));
            }
        }
    }

    #[test]
    fn tensor_length_must_match_shape(c in 1usize..4, r in 1usize..6, k in 1usize..6, extra in 1usize..3) {
        let shape = Shape::new(c, r, k);
        prop_assert!(Tensor::new(shape, vec![0.0; shape.len()]).is_ok());
        prop_assert!(Tensor::new(shape, vec![0.0; shape.len() + extra]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn model_files_round_trip(seed in any::<u64>(), n in 1usize..=5, bits in 1u8..=8) {
        let spec = ModelSpec::reduced(8, 6);
        let params = ModelParams::init(&spec, &mut rng::stream(seed, "init")).unwrap();
        // weights are stored as f32: one trip rounds, a second changes nothing
        let (s2, p2) = read_sacw(&write_sacw(&spec, &params).unwrap(), 8, 6).unwrap();
        prop_assert_eq!(&s2, &spec);
        for (a, b) in params.trainable().iter().zip(p2.trainable()) {
            for (x, y) in a.iter().zip(b) {
                prop_assert_eq!(*y, *x as f32 as f64);
            }
        }
        let (_, p3) = read_sacw(&write_sacw(&s2, &p2).unwrap(), 8, 6).unwrap();
        prop_assert_eq!(&p3, &p2);

        let (fs, fp) = fold_model(&spec, &params).unwrap();
        let mut q = encode_model(&shift_quantize_model(&fs, &fp, &QuantConfig::new(n), ExecMode::Sequential).unwrap(), bits).unwrap();
        let bytes = write_saqm(&q).unwrap();
        let back = read_saqm(&bytes, 8, 6).unwrap();
        prop_assert_eq!(write_saqm(&back).unwrap(), bytes);
        // clamp counts describe the encoding pass and are not stored
        for l in &mut q.layers {
            if let Some(e) = l.encoding.as_mut() {
                e.clamp_count = 0;
            }
        }
        prop_assert_eq!(&back, &q);
        prop_assert_eq!(dequantize_model(&back).unwrap(), dequantize_model(&q).unwrap());
    }
}
