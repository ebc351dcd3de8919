use coheq_core::Complex64;
use coheq_nn::fixedpoint::{dequantize, quantize_value, quantize_weights, read_ceqn, write_ceqn};
use coheq_nn::model::ArchKind;
use coheq_nn::{build_model, equalize, EqArch};
use proptest::prelude::*;

fn arch_of(lstm: bool) -> EqArch {
    if lstm {
        EqArch::bilstm()
    } else {
        EqArch::deep_cnn()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn output_window_is_61_symbols(seed in any::<u64>(), lstm in any::<bool>(), batch in 1usize..4) {
        let model = build_model(arch_of(lstm), seed).unwrap();
        let x: Vec<f64> = (0..batch * 81 * 4).map(|i| ((i as f64 + seed as f64) * 0.37).sin()).collect();
        let y = model.forward(&x, batch).unwrap();
        prop_assert_eq!(y.len(), batch * 61 * 2);
        prop_assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn equalize_keeps_stream_length(len in 81usize..400, seed in any::<u64>()) {
        let model = build_model(EqArch::deep_cnn(), seed).unwrap();
        let s: Vec<Complex64> = (0..len).map(|i| Complex64::new((i as f64).cos(), (i as f64 * 0.5).sin())).collect();
        let out = equalize(&model, [&s, &s]).unwrap();
        prop_assert_eq!(out.len(), len);
    }

    #[test]
    fn quantization_error_is_half_an_lsb(w in -100.0f64..100.0, fb in 0u32..24) {
        let q = quantize_value(w, fb).unwrap();
        let lsb = (-(fb as f64)).exp2();
        prop_assert!((q as f64 * lsb - w).abs() <= lsb / 2.0);
    }

    #[test]
    fn blob_round_trip(seed in any::<u64>(), lstm in any::<bool>(), fb in 8u32..31) {
        let model = build_model(arch_of(lstm), seed).unwrap();
        let blob = quantize_weights(&model, fb).unwrap();
        prop_assert!(blob.clipped.is_empty());
        let kind = if lstm { ArchKind::Bilstm } else { ArchKind::DeepCnn };
        prop_assert_eq!(blob.arch_kind, kind);
        let mut bytes = Vec::new();
        write_ceqn(&blob, &mut bytes).unwrap();
        let back = read_ceqn(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &blob);
        let restored = dequantize(&back).unwrap();
        let lsb = (-(fb as f64)).exp2();
        for (a, b) in model.params().iter().zip(restored.params()) {
            prop_assert_eq!(a.shape(), b.shape());
            prop_assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() <= lsb / 2.0));
        }
    }
}
