//! Naive reference implementations used as test oracles.

use captalk::autodiff::Tensor;
use captalk::head::{HeadModel, MotionSequence};

pub type Frames = Vec<Vec<[f64; 3]>>;

pub fn to_frames(t: &Tensor) -> Frames {
    let (n, v) = (t.shape()[0], t.shape()[1]);
    let d = t.data();
    (0..n)
        .map(|f| (0..v).map(|i| [d[(f * v + i) * 3], d[(f * v + i) * 3 + 1], d[(f * v + i) * 3 + 2]]).collect())
        .collect()
}

fn norm(a: [f64; 3], b: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s.sqrt()
}

fn std_pop(xs: &[f64]) -> f64 {
    let mut mean = 0.0;
    for x in xs {
        mean += x;
    }
    mean /= xs.len() as f64;
    let mut var = 0.0;
    for x in xs {
        var += (x - mean) * (x - mean);
    }
    (var / xs.len() as f64).sqrt()
}

pub fn lve(pred: &Frames, gt: &Frames, lips: &[usize]) -> f64 {
    let mut total = 0.0;
    for f in 0..pred.len() {
        let mut worst = 0.0f64;
        for &i in lips {
            worst = worst.max(norm(pred[f][i], gt[f][i]));
        }
        total += worst;
    }
    total / pred.len() as f64
}

pub fn mhd(pred: &Frames, gt: &Frames) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for f in 0..pred.len() {
        for i in 0..pred[f].len() {
            total += norm(pred[f][i], gt[f][i]);
            count += 1.0;
        }
    }
    total / count
}

fn dynamism(x: &Frames, v: usize) -> f64 {
    let n = x.len() as f64;
    let mut mean = [0.0; 3];
    for frame in x {
        for k in 0..3 {
            mean[k] += frame[v][k] / n;
        }
    }
    let mut ss = 0.0;
    for frame in x {
        let d = norm(frame[v], mean);
        ss += d * d;
    }
    (ss / n).sqrt()
}

pub fn fdd(pred: &Frames, gt: &Frames, upper: &[usize]) -> f64 {
    let mut total = 0.0;
    for &v in upper {
        total += dynamism(pred, v) - dynamism(gt, v);
    }
    total / upper.len() as f64
}

/// Blendshapes then Rodrigues' formula in vector form.
pub fn decode(head: &HeadModel, motion: &MotionSequence) -> Frames {
    let n3 = head.vertex_count * 3;
    let mut frames = Vec::new();
    for t in 0..motion.frames() {
        let (psi, theta) = (motion.psi(t), motion.theta(t));
        let mut flat = head.template.clone();
        for j in 0..n3 {
            for (k, b) in motion.beta.iter().enumerate() {
                flat[j] += b * head.shape_basis[k * n3 + j];
            }
            for (k, e) in psi.iter().enumerate() {
                flat[j] += e * head.expr_basis[k * n3 + j];
            }
            for (k, p) in theta[3..].iter().enumerate() {
                flat[j] += p * head.pose_basis[k * n3 + j];
            }
        }
        let w = [theta[0], theta[1], theta[2]];
        let angle = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        let c = head.rotation_center;
        let mut verts = Vec::new();
        for i in 0..head.vertex_count {
            let p = [flat[3 * i] - c[0], flat[3 * i + 1] - c[1], flat[3 * i + 2] - c[2]];
            let r = if angle < 1e-12 {
                p
            } else {
                let k = [w[0] / angle, w[1] / angle, w[2] / angle];
                let cross = [k[1] * p[2] - k[2] * p[1], k[2] * p[0] - k[0] * p[2], k[0] * p[1] - k[1] * p[0]];
                let dot = k[0] * p[0] + k[1] * p[1] + k[2] * p[2];
                let (s, co) = angle.sin_cos();
                [0, 1, 2].map(|a| p[a] * co + cross[a] * s + k[a] * dot * (1.0 - co))
            };
            verts.push([r[0] + c[0], r[1] + c[1], r[2] + c[2]]);
        }
        frames.push(verts);
    }
    frames
}

pub fn lodd(pred: &MotionSequence, gt: &MotionSequence, head: &HeadModel) -> f64 {
    let lip = |m: &MotionSequence| {
        let f = decode(head, m);
        f.iter().map(|v| norm(v[head.upper_lip_vertex], v[head.lower_lip_vertex])).collect::<Vec<_>>()
    };
    (std_pop(&lip(pred)) - std_pop(&lip(gt))).abs()
}

pub fn hpdd(pred: &MotionSequence, gt: &MotionSequence) -> f64 {
    let mut total = 0.0;
    for c in 0..3 {
        let p: Vec<f64> = (0..pred.frames()).map(|t| pred.theta(t)[c]).collect();
        let g: Vec<f64> = (0..gt.frames()).map(|t| gt.theta(t)[c]).collect();
        total += (std_pop(&p) - std_pop(&g)).abs();
    }
    total / 3.0
}

/// Lip-opening distance per frame and its population deviation.
pub fn lip_open_std(head: &HeadModel, motion: &MotionSequence) -> f64 {
    let f = decode(head, motion);
    std_pop(&f.iter().map(|v| norm(v[head.upper_lip_vertex], v[head.lower_lip_vertex])).collect::<Vec<_>>())
}

/// Mean over the three global-rotation components of their population deviation.
pub fn rotation_std(motion: &MotionSequence) -> f64 {
    let mut total = 0.0;
    for c in 0..3 {
        total += std_pop(&(0..motion.frames()).map(|t| motion.theta(t)[c]).collect::<Vec<_>>());
    }
    total / 3.0
}
