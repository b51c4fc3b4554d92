//! Random small metric instances compared against the naive oracles.

use captalk::autodiff::Tensor;
use captalk::head::{make_toy_head_model, MotionSequence};
use captalk::metrics;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles;

/// Largest absolute deviation between library and oracle over `instances` random cases.
pub fn worst_oracle_gap(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.gen_range(1..=5);
        let v = rng.gen_range(1..=8);
        let rand_t = |rng: &mut ChaCha8Rng| {
            Tensor::new(vec![n, v, 3], (0..n * v * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let (p, g) = (rand_t(&mut rng), rand_t(&mut rng));
        let subset: Vec<usize> = (0..v).filter(|_| rng.gen_bool(0.5)).collect();
        let subset = if subset.is_empty() { vec![rng.gen_range(0..v)] } else { subset };
        let (pf, gf) = (oracles::to_frames(&p), oracles::to_frames(&g));
        worst = worst
            .max((metrics::lve(&p, &g, &subset).unwrap() - oracles::lve(&pf, &gf, &subset)).abs())
            .max((metrics::mhd(&p, &g).unwrap() - oracles::mhd(&pf, &gf)).abs())
            .max((metrics::fdd(&p, &g, &subset).unwrap() - oracles::fdd(&pf, &gf, &subset)).abs());

        let head = make_toy_head_model(rng.gen(), 8, 2, 3, 1).unwrap();
        let motion = |rng: &mut ChaCha8Rng| {
            let f = (0..n * 7).map(|_| rng.gen_range(-0.5..0.5)).collect();
            MotionSequence::new(25.0, 3, 4, vec![0.3, -0.1], f).unwrap()
        };
        let (pm, gm) = (motion(&mut rng), motion(&mut rng));
        worst = worst
            .max((metrics::lodd(&pm, &gm, &head).unwrap() - oracles::lodd(&pm, &gm, &head)).abs())
            .max((metrics::hpdd(&pm, &gm) - oracles::hpdd(&pm, &gm)).abs());
    }
    worst
}

/// True when every metric is exactly zero on identical inputs.
pub fn identity_is_zero(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = make_toy_head_model(seed, 8, 2, 3, 1).unwrap();
    (0..20).all(|_| {
        let n = rng.gen_range(1..=5);
        let f = (0..n * 7).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let m = MotionSequence::new(25.0, 3, 4, vec![0.3, -0.1], f).unwrap();
        let r = metrics::evaluate(&m, &m, &head, metrics::FrameAlign::Strict).unwrap();
        [r.lve, r.mhd, r.fdd, r.lodd, r.hpdd].iter().all(|&x| x == 0.0)
    })
}
