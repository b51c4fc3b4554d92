//! Lip-sync and motion-dynamics metrics over vertex trajectories `[N, V, 3]`
//! and pose tracks. Standard deviations are population deviations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::popstd;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::head::{write_json, HeadModel, MotionSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub lve: f64,
    pub mhd: f64,
    pub fdd: f64,
    pub lodd: f64,
    pub hpdd: f64,
    pub frames: usize,
    pub vertices: usize,
}

impl MetricReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

fn check_pair(pred: &Tensor, gt: &Tensor) -> Result<(usize, usize)> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(format!("pred {:?} vs gt {:?}", pred.shape(), gt.shape())));
    }
    match *pred.shape() {
        [n, v, 3] if n > 0 && v > 0 => Ok((n, v)),
        _ => Err(Error::shape(format!("expected [N >= 1, V >= 1, 3] vertices, got {:?}", pred.shape()))),
    }
}

fn check_indices(idx: &[usize], v: usize) -> Result<()> {
    if idx.is_empty() || idx.iter().any(|&i| i >= v) {
        return Err(Error::shape(format!("vertex subset must be non-empty and below {v}")));
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn vertex(x: &Tensor, v_count: usize, t: usize, v: usize) -> &[f64] {
    let o = (t * v_count + v) * 3;
    &x.data()[o..o + 3]
}

/// Mean over frames of the largest lip-vertex error.
pub fn lve(pred: &Tensor, gt: &Tensor, lips: &[usize]) -> Result<f64> {
    let (n, v) = check_pair(pred, gt)?;
    check_indices(lips, v)?;
    let total: f64 = (0..n)
        .map(|t| {
            lips.iter()
                .map(|&i| dist(vertex(pred, v, t, i), vertex(gt, v, t, i)))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean vertex error over all frames and vertices.
pub fn mhd(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (n, v) = check_pair(pred, gt)?;
    let total: f64 = pred.data().chunks(3).zip(gt.data().chunks(3)).map(|(a, b)| dist(a, b)).sum();
    Ok(total / (n * v) as f64)
}

fn dynamism(x: &Tensor, n: usize, v_count: usize, v: usize) -> f64 {
    let mut mean = [0.0; 3];
    for t in 0..n {
        for (m, c) in mean.iter_mut().zip(vertex(x, v_count, t, v)) {
            *m += c / n as f64;
        }
    }
    let ss: f64 = (0..n).map(|t| dist(vertex(x, v_count, t, v), &mean).powi(2)).sum();
    (ss / n as f64).sqrt()
}

/// Signed mean difference of upper-face vertex dynamism, `pred − gt`.
pub fn fdd(pred: &Tensor, gt: &Tensor, upper: &[usize]) -> Result<f64> {
    let (n, v) = check_pair(pred, gt)?;
    check_indices(upper, v)?;
    let total: f64 = upper
        .iter()
        .map(|&i| dynamism(pred, n, v, i) - dynamism(gt, n, v, i))
        .sum();
    Ok(total / upper.len() as f64)
}

/// Per-frame distance between the two lip landmarks.
pub fn lip_distances(head: &HeadModel, vertices: &Tensor) -> Result<Vec<f64>> {
    let v = head.vertex_count;
    match *vertices.shape() {
        [n, vv, 3] if vv == v => Ok((0..n)
            .map(|t| dist(vertex(vertices, v, t, head.upper_lip_vertex), vertex(vertices, v, t, head.lower_lip_vertex)))
            .collect()),
        _ => Err(Error::shape(format!("expected [N, {v}, 3] vertices, got {:?}", vertices.shape()))),
    }
}

pub fn decode_vertices(head: &HeadModel, motion: &MotionSequence) -> Result<Tensor> {
    let data = head.decode_sequence(motion)?;
    Tensor::new(vec![motion.frames(), head.vertex_count, 3], data)
}

/// Absolute difference of lip-opening deviations.
pub fn lodd(pred: &MotionSequence, gt: &MotionSequence, head: &HeadModel) -> Result<f64> {
    let p = lip_distances(head, &decode_vertices(head, pred)?)?;
    let g = lip_distances(head, &decode_vertices(head, gt)?)?;
    Ok((popstd(&p) - popstd(&g)).abs())
}

/// Population deviation of each global-rotation component.
pub fn rotation_std(motion: &MotionSequence) -> [f64; 3] {
    let mut s = [0.0; 3];
    for (c, out) in s.iter_mut().enumerate() {
        let xs: Vec<f64> = (0..motion.frames()).map(|t| motion.theta(t)[c]).collect();
        *out = popstd(&xs);
    }
    s
}

/// Mean absolute difference of per-axis head-rotation deviations.
pub fn hpdd(pred: &MotionSequence, gt: &MotionSequence) -> f64 {
    let (p, g) = (rotation_std(pred), rotation_std(gt));
    p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() / 3.0
}

/// What to do when the prediction and ground truth differ in length.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FrameAlign {
    #[default]
    Strict,
    /// Truncate or repeat-last-frame pad the prediction to the ground-truth length.
    Fit,
}

fn fit_frames(m: &MotionSequence, frames: usize) -> Result<MotionSequence> {
    if m.frames() >= frames {
        return m.truncated(frames);
    }
    let w = m.width();
    let mut data = m.features().to_vec();
    let last = data[data.len() - w..].to_vec();
    while data.len() < frames * w {
        data.extend_from_slice(&last);
    }
    MotionSequence::new(m.fps, m.k_psi, m.k_theta, m.beta.clone(), data)
}

pub fn evaluate(pred: &MotionSequence, gt: &MotionSequence, head: &HeadModel, align: FrameAlign) -> Result<MetricReport> {
    if pred.fps != gt.fps {
        return Err(Error::format(format!("fps mismatch: pred {} vs gt {}", pred.fps, gt.fps)));
    }
    if pred.k_psi != gt.k_psi || pred.k_theta != gt.k_theta || pred.beta.len() != gt.beta.len() {
        return Err(Error::format("pred and gt motion dimensions differ"));
    }
    let pred = match (pred.frames() == gt.frames(), align) {
        (true, _) => pred.clone(),
        (false, FrameAlign::Fit) => fit_frames(pred, gt.frames())?,
        (false, FrameAlign::Strict) => {
            return Err(Error::format(format!("frame count mismatch: pred {} vs gt {}", pred.frames(), gt.frames())))
        }
    };
    let pv = decode_vertices(head, &pred)?;
    let gv = decode_vertices(head, gt)?;
    Ok(MetricReport {
        lve: lve(&pv, &gv, &head.lip_indices)?,
        mhd: mhd(&pv, &gv)?,
        fdd: fdd(&pv, &gv, &head.upper_face_indices)?,
        lodd: lodd(&pred, gt, head)?,
        hpdd: hpdd(&pred, gt),
        frames: gt.frames(),
        vertices: head.vertex_count,
    })
}

pub fn evaluate_files(pred: &Path, gt: &Path, head: &Path, align: FrameAlign) -> Result<MetricReport> {
    let head = HeadModel::load(head)?;
    evaluate(&MotionSequence::load(pred)?, &MotionSequence::load(gt)?, &head, align)
}
