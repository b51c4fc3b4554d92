mod common;

use captalk::autodiff::Tensor;
use captalk::codec::quant::code_magnitude;
use captalk::codec::{bsq_quantize, quantize_multiscale, resize_time, MultiScaleCode};
use common::quant_cases::sweep;
use proptest::prelude::*;

#[test]
fn bulk_invariants() {
    let s = sweep(500, 21);
    assert_eq!(s.bad_entries, 0);
    assert!(s.worst_row_norm_gap < 1e-12);
    assert!(s.worst_telescope_gap < 1e-12);
    assert_eq!(s.pack_failures, 0);
}

#[test]
fn zero_latent_starts_positive_then_corrects() {
    let q = quantize_multiscale(&Tensor::zeros(&[10, 4]), &[1, 5, 10], 1e-6).unwrap();
    let b = q.code.blocks();
    assert!(b[0].data().iter().all(|&v| v == 0.5));
    assert!(b[1].data().iter().all(|&v| v == -0.5));
}

proptest! {
    #[test]
    fn bsq_rows_are_signed_and_unit(z in prop::collection::vec(-10.0..10.0f64, 2..40)) {
        let (q, u) = bsq_quantize(&z, 1e-9);
        let m = code_magnitude(z.len());
        prop_assert!(q.iter().all(|&v| v == m || v == -m));
        prop_assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in q.iter().zip(&u) {
            prop_assert_eq!(*a >= 0.0, *b >= 0.0);
        }
    }

    #[test]
    fn packing_roundtrips(d in 2usize..40, lens in prop::collection::vec(1usize..12, 1..5), seed in any::<u64>()) {
        let mut s = seed;
        let blocks = lens
            .iter()
            .map(|&l| (0..l * d).map(|_| { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); s >> 63 == 1 }).collect())
            .collect();
        let code = MultiScaleCode::new(d, blocks).unwrap();
        prop_assert_eq!(MultiScaleCode::from_bytes(&code.to_bytes()).unwrap(), code);
    }

    #[test]
    fn resize_keeps_constants(c in -5.0..5.0f64, src in 1usize..30, dst in 1usize..30) {
        let t = Tensor::full(&[src, 3], c);
        let r = resize_time(&t, dst).unwrap();
        prop_assert!(r.data().iter().all(|&v| (v - c).abs() < 1e-12));
    }
}
