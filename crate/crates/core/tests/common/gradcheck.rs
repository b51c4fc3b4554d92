//! Central finite-difference checks for every differentiable graph operation.

use captalk::autodiff::{Graph, Op, Tensor, Var};
use captalk::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const CASES: usize = 20;

/// Inputs for one case, the indices to differentiate, and a builder.
pub struct Case {
    pub inputs: Vec<Tensor>,
    pub wrt: Vec<usize>,
    pub build: Box<dyn Fn(&mut Graph, &[Var], &[Tensor]) -> Result<Var>>,
}

pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

/// Normal entries pushed at least `gap` away from zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = normal(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (v.abs() + gap);
    }
    t
}

pub fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.3..2.5)).collect()).unwrap()
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize, k: usize) -> Vec<usize> {
    (0..k).map(|_| rng.gen_range(lo..=hi)).collect()
}

/// `Σ w ⊙ f(inputs)` with fixed random weights, evaluated on fresh leaves.
fn weighted(case: &Case, values: &[Tensor], base: &[Tensor], weights: &Tensor, backward: bool) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
    let out = (case.build)(&mut g, &vars, base)?;
    let w = g.leaf(weights.clone());
    let prod = g.mul(out, w)?;
    let loss = g.sum(prod)?;
    let value = g.value(loss).data()[0];
    let mut grads = Vec::new();
    if backward {
        g.backward(loss)?;
        for &i in &case.wrt {
            grads.push(g.grad(vars[i]).unwrap_or_else(|| Tensor::zeros(values[i].shape())));
        }
    }
    Ok((value, grads))
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)` over all checked inputs.
pub fn check_case(case: &Case, rng: &mut ChaCha8Rng) -> Result<f64> {
    let base = case.inputs.clone();
    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = base.iter().map(|t| g.leaf(t.clone())).collect();
        let o = (case.build)(&mut g, &vars, &base)?;
        g.shape(o).to_vec()
    };
    let weights = normal(rng, &out_shape);
    let (_, analytic) = weighted(case, &base, &base, &weights, true)?;
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (k, &i) in case.wrt.iter().enumerate() {
        for j in 0..base[i].numel() {
            let mut plus = base.clone();
            plus[i].data_mut()[j] += STEP;
            let mut minus = base.clone();
            minus[i].data_mut()[j] -= STEP;
            let fp = weighted(case, &plus, &base, &weights, false)?.0;
            let fm = weighted(case, &minus, &base, &weights, false)?.0;
            let num = (fp - fm) / (2.0 * STEP);
            let a = analytic[k].data()[j];
            diff += (a - num) * (a - num);
            na += a * a;
            nn += num * num;
        }
    }
    Ok(diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-8))
}

fn unary(x: Tensor, op: Op) -> Case {
    Case {
        inputs: vec![x],
        wrt: vec![0],
        build: Box::new(move |g, v, _| g.apply(op.clone(), &[v[0]])),
    }
}

fn binary(a: Tensor, b: Tensor, op: Op) -> Case {
    Case {
        inputs: vec![a, b],
        wrt: vec![0, 1],
        build: Box::new(move |g, v, _| g.apply(op.clone(), &[v[0], v[1]])),
    }
}

/// Names of all checked operations, each with a case generator.
pub fn op_names() -> Vec<&'static str> {
    vec![
        "add", "sub", "mul", "div", "scale", "shift", "matmul", "transpose", "reshape", "slice", "concat", "sum",
        "mean", "softmax", "layer_norm", "gelu", "relu", "sigmoid", "exp", "log", "sqrt", "abs", "clamp_min",
        "l2_norm", "linear_resize_time", "rope_rotate", "gather_rows", "pass_through", "stop_gradient",
        "bce_with_logits", "axis_angle_to_matrix",
    ]
}

pub fn make_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let s2 = dims(rng, 1, 4, 2);
    let s3 = dims(rng, 1, 3, 3);
    match name {
        "add" | "sub" | "mul" => {
            let s = dims(rng, 1, 4, 3);
            let b_shape = if rng.gen_bool(0.5) { s.clone() } else { vec![1, s[1], s[2]] };
            let b_shape = if rng.gen_bool(0.3) { vec![s[2]] } else { b_shape };
            let op = match name {
                "add" => Op::Add,
                "sub" => Op::Sub,
                _ => Op::Mul,
            };
            binary(normal(rng, &s), normal(rng, &b_shape), op)
        }
        "div" => {
            let s = s2.clone();
            binary(normal(rng, &s), away_from_zero(rng, &s, 0.5), Op::Div)
        }
        "scale" => {
            let c = rng.gen_range(-3.0..3.0);
            unary(normal(rng, &s2), Op::Scale(c))
        }
        "shift" => {
            let c = rng.gen_range(-3.0..3.0);
            unary(normal(rng, &s2), Op::Shift(c))
        }
        "matmul" => {
            let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
            let (ta, tb) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
            let batch = rng.gen_range(0..3);
            let mut sa = if ta { vec![k, m] } else { vec![m, k] };
            let mut sb = if tb { vec![n, k] } else { vec![k, n] };
            if batch > 0 {
                sa.insert(0, batch);
                if rng.gen_bool(0.5) {
                    sb.insert(0, batch);
                }
            }
            binary(normal(rng, &sa), normal(rng, &sb), Op::MatMul { trans_a: ta, trans_b: tb })
        }
        "transpose" => {
            if rng.gen_bool(0.5) {
                unary(normal(rng, &s2), Op::Transpose(None))
            } else {
                let perms = [[1, 0, 2], [2, 0, 1], [0, 2, 1], [1, 2, 0]];
                let p = perms[rng.gen_range(0..4)].to_vec();
                unary(normal(rng, &s3), Op::Transpose(Some(p)))
            }
        }
        "reshape" => {
            let s = dims(rng, 1, 4, 3);
            unary(normal(rng, &s), Op::Reshape(vec![s[0] * s[1], s[2]]))
        }
        "slice" => {
            let s = dims(rng, 2, 5, 2);
            let axis = rng.gen_range(0..2);
            let start = rng.gen_range(0..s[axis] - 1);
            let end = rng.gen_range(start + 1..=s[axis]);
            unary(normal(rng, &s), Op::Slice { axis, start, end })
        }
        "concat" => {
            let axis = rng.gen_range(0..2);
            let s = s2.clone();
            let mut t = s.clone();
            t[axis] = rng.gen_range(1..4);
            binary(normal(rng, &s), normal(rng, &t), Op::Concat { axis })
        }
        "sum" | "mean" => {
            let s = dims(rng, 1, 4, 3);
            let axis = if rng.gen_bool(0.3) { None } else { Some(rng.gen_range(0..3)) };
            unary(normal(rng, &s), if name == "sum" { Op::Sum(axis) } else { Op::Mean(axis) })
        }
        "softmax" => unary(normal(rng, &s3), Op::Softmax),
        "layer_norm" => {
            let mut s = s2.clone();
            s[1] += 1;
            unary(normal(rng, &s), Op::LayerNorm { eps: 1e-5 })
        }
        "gelu" => unary(normal(rng, &s2), Op::Gelu),
        "relu" => unary(away_from_zero(rng, &s2, 0.01), Op::Relu),
        "sigmoid" => unary(normal(rng, &s2), Op::Sigmoid),
        "exp" => unary(normal(rng, &s2), Op::Exp),
        "log" => unary(positive(rng, &s2), Op::Log),
        "sqrt" => unary(positive(rng, &s2), Op::Sqrt),
        "abs" => unary(away_from_zero(rng, &s2, 0.01), Op::Abs),
        "clamp_min" => {
            let mut x = normal(rng, &s2);
            let c = 0.1;
            for v in x.data_mut() {
                if (*v - c).abs() < 0.01 {
                    *v += 0.05;
                }
            }
            unary(x, Op::ClampMin(c))
        }
        "l2_norm" => unary(away_from_zero(rng, &s2, 0.1), Op::L2Norm),
        "linear_resize_time" => {
            let s = dims(rng, 1, 6, 2);
            let target = rng.gen_range(1..9);
            unary(normal(rng, &s), Op::LinearResizeTime { target })
        }
        "rope_rotate" => {
            let t = rng.gen_range(1..5);
            let half = rng.gen_range(1..4);
            let positions: Vec<f64> = (0..t).map(|_| rng.gen_range(-50.0..150.0)).collect();
            let freqs: Vec<f64> = (0..half).map(|_| rng.gen_range(0.0..1.0)).collect();
            let shape = if rng.gen_bool(0.5) { vec![t, 2 * half] } else { vec![2, t, 2 * half] };
            unary(normal(rng, &shape), Op::RopeRotate { positions, freqs })
        }
        "gather_rows" => {
            let s = dims(rng, 1, 5, 2);
            let k = rng.gen_range(1..7);
            let indices = (0..k).map(|_| rng.gen_range(0..s[0])).collect();
            unary(normal(rng, &s), Op::GatherRows { indices })
        }
        "pass_through" => {
            // The forward target is a constant copy of the surrogate, so the op is the identity.
            let x = normal(rng, &s2);
            Case {
                inputs: vec![x],
                wrt: vec![0],
                build: Box::new(|g, v, _| {
                    let target = g.value(v[0]).clone();
                    let t = g.leaf(target);
                    let y = g.pass_through(t, v[0])?;
                    g.mul(y, v[0])
                }),
            }
        }
        "stop_gradient" => {
            // f(x) = x ⊙ x − sg(x) ⊙ x with sg's argument frozen at the base point.
            let x = normal(rng, &s2);
            Case {
                inputs: vec![x],
                wrt: vec![0],
                build: Box::new(|g, v, base| {
                    let frozen = if g.value(v[0]) == &base[0] { v[0] } else { g.leaf(base[0].clone()) };
                    let s = g.stop_gradient(frozen)?;
                    let a = g.mul(v[0], v[0])?;
                    let b = g.mul(s, v[0])?;
                    g.sub(a, b)
                }),
            }
        }
        "bce_with_logits" => {
            let s = s2.clone();
            let n: usize = s.iter().product();
            let t = Tensor::new(s.clone(), (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
            Case {
                inputs: vec![normal(rng, &s).clone(), t],
                wrt: vec![0],
                build: Box::new(|g, v, _| g.apply(Op::BceWithLogits, &[v[0], v[1]])),
            }
        }
        "axis_angle_to_matrix" => {
            let n = rng.gen_range(1..4);
            let mut x = normal(rng, &[n, 3]);
            if rng.gen_bool(0.2) {
                x.data_mut().iter_mut().for_each(|v| *v *= 1e-3);
            }
            unary(x, Op::AxisAngleToMatrix)
        }
        other => panic!("no gradient case for {other}"),
    }
}

/// Worst relative error over `CASES` random cases of `name`.
pub fn check_op(name: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ captalk::conditioning::text::fnv1a(name.as_bytes()));
    (0..CASES)
        .map(|_| {
            let case = make_case(name, &mut rng);
            check_case(&case, &mut rng).unwrap_or_else(|e| panic!("{name}: {e}"))
        })
        .fold(0.0, f64::max)
}

/// Relative error between the straight-through gradient of the full codec loss
/// with respect to the input window and finite differences of the frozen-code surrogate.
pub fn codec_straight_through_error(seed: u64) -> f64 {
    use captalk::codec::{CodecConfig, CodecModel, CodecSample, NormStats, QuantMode};
    use captalk::head::{make_toy_head_model, MotionSequence};

    let head = make_toy_head_model(seed, 12, 2, 4, 2).unwrap();
    let cfg = CodecConfig {
        window: 8,
        scales: vec![1, 4, 8],
        code_dim: 8,
        d_model: 16,
        layers: 1,
        heads: 2,
        ffn_hidden: 24,
        ..CodecConfig::default()
    };
    let width = head.motion_dim();
    let model = CodecModel::new(cfg, head.clone(), NormStats::identity(width), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = normal(&mut rng, &[8, width]);
    let target = normal(&mut rng, &[8, width]);
    let motion = MotionSequence::new(25.0, 4, width - 4, vec![0.1, -0.2], target.data().to_vec()).unwrap();
    let sample = CodecSample::new(&head, &motion).unwrap();

    let loss_at = |x: &Tensor, mode: &QuantMode, backward: bool| {
        let mut g = Graph::new();
        let p = model.params().bind(&mut g);
        let xv = g.leaf(x.clone());
        let out = model.forward_losses_from(&mut g, &p, xv, &sample, mode).unwrap();
        let value = g.value(out.losses.total).data()[0];
        let grad = backward.then(|| {
            g.backward(out.losses.total).unwrap();
            g.grad(xv).unwrap()
        });
        (value, grad, out.frozen)
    };
    let (_, live_grad, frozen) = loss_at(&x0, &QuantMode::Live, true);
    let mode = QuantMode::Frozen(frozen);
    let (_, frozen_grad, _) = loss_at(&x0, &mode, true);
    let live = live_grad.unwrap();
    for (a, b) in live.data().iter().zip(frozen_grad.unwrap().data()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "live {a} vs frozen {b}");
    }
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for j in 0..x0.numel() {
        let mut p = x0.clone();
        p.data_mut()[j] += STEP;
        let mut m = x0.clone();
        m.data_mut()[j] -= STEP;
        let num = (loss_at(&p, &mode, false).0 - loss_at(&m, &mode, false).0) / (2.0 * STEP);
        let a = live.data()[j];
        diff += (a - num) * (a - num);
        na += a * a;
        nn += num * num;
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-8)
}
