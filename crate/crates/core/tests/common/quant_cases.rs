//! Bulk quantizer invariant sweep.

use captalk::autodiff::Tensor;
use captalk::codec::{dequantize_multiscale, quantize_multiscale, MultiScaleCode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Nearest double to 1/√32.
pub const INV_SQRT_32: f64 = 0.176_776_695_296_636_88;

#[derive(Debug, Default)]
pub struct QuantSweep {
    pub latents: usize,
    pub bad_entries: usize,
    pub worst_row_norm_gap: f64,
    pub worst_telescope_gap: f64,
    pub pack_failures: usize,
}

pub fn sweep(latents: usize, seed: u64) -> QuantSweep {
    let scales = [1, 5, 25, 50, 100];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = QuantSweep {
        latents,
        ..QuantSweep::default()
    };
    for k in 0..latents {
        let scale = [1e-3, 0.1, 1.0, 30.0][k % 4];
        let data = (0..100 * 32).map(|_| { let n: f64 = StandardNormal.sample(&mut rng); scale * n }).collect();
        let z = Tensor::new(vec![100, 32], data).unwrap();
        let q = quantize_multiscale(&z, &scales, 1e-6).unwrap();
        for block in q.code.blocks() {
            out.bad_entries += block.data().iter().filter(|&&v| v != INV_SQRT_32 && v != -INV_SQRT_32).count();
            for row in block.data().chunks(32) {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                out.worst_row_norm_gap = out.worst_row_norm_gap.max((n - 1.0).abs());
            }
        }
        for u in &q.units {
            for row in u.data().chunks(32) {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                out.worst_row_norm_gap = out.worst_row_norm_gap.max((n - 1.0).abs());
            }
        }
        let sum = dequantize_multiscale(&q.code, 100).unwrap();
        for ((a, b), c) in z.data().iter().zip(sum.data()).zip(q.residual.data()) {
            out.worst_telescope_gap = out.worst_telescope_gap.max((a - (b + c)).abs());
        }
        let back = MultiScaleCode::from_bytes(&q.code.to_bytes());
        if back.as_ref().ok() != Some(&q.code) {
            out.pack_failures += 1;
        }
    }
    out
}
