//! Linear blendshape head model and per-frame motion sequences.
//!
//! Vertices are `T̄ + S·β + E·ψ + P·θ_pc`, rigidly rotated by the global
//! axis-angle `θ[0..3]` about `rotation_center`. Pose layout per frame is
//! `[global axis-angle (3), corrective coefficients (K_pc)]`.
//!
//! Loading real FLAME asset files is not supported; [`make_toy_head_model`]
//! builds a deterministic stand-in with the same structure.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Graph, Op, Tensor, Var};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
/// Global rotation components at the front of every pose vector.
pub const GLOBAL_POSE_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadModel {
    pub vertex_count: usize,
    pub k_beta: usize,
    pub k_psi: usize,
    pub k_pc: usize,
    /// `V × 3`, row-major.
    pub template: Vec<f64>,
    /// Bases stored as `[K, V·3]` so coefficients multiply from the left.
    pub shape_basis: Vec<f64>,
    pub expr_basis: Vec<f64>,
    pub pose_basis: Vec<f64>,
    pub lip_indices: Vec<usize>,
    pub upper_face_indices: Vec<usize>,
    pub upper_lip_vertex: usize,
    pub lower_lip_vertex: usize,
    pub rotation_center: [f64; 3],
}

impl HeadModel {
    pub fn k_theta(&self) -> usize {
        GLOBAL_POSE_DIM + self.k_pc
    }

    /// Per-frame motion feature width (`K_ψ + K_θ`).
    pub fn motion_dim(&self) -> usize {
        self.k_psi + self.k_theta()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vertex_count;
        let n3 = v * 3;
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::format(format!("head model: {what}"))) };
        check(v > 0, "vertex count must be positive")?;
        check(self.template.len() == n3, "template size")?;
        check(self.shape_basis.len() == self.k_beta * n3, "shape basis size")?;
        check(self.expr_basis.len() == self.k_psi * n3, "expression basis size")?;
        check(self.pose_basis.len() == self.k_pc * n3, "pose basis size")?;
        check(
            self.lip_indices.iter().chain(&self.upper_face_indices).all(|&i| i < v),
            "vertex index out of range",
        )?;
        check(
            self.lip_indices.iter().all(|i| !self.upper_face_indices.contains(i)),
            "lip and upper-face sets overlap",
        )?;
        check(
            self.lip_indices.contains(&self.upper_lip_vertex) && self.lip_indices.contains(&self.lower_lip_vertex),
            "lip landmark vertices must be lip vertices",
        )?;
        let finite = self
            .template
            .iter()
            .chain(&self.shape_basis)
            .chain(&self.expr_basis)
            .chain(&self.pose_basis)
            .chain(&self.rotation_center)
            .all(|x| x.is_finite());
        check(finite, "non-finite values")
    }

    /// Vertex positions (`V × 3`, row-major) for one frame.
    pub fn decode_vertices(&self, beta: &[f64], theta: &[f64], psi: &[f64]) -> Result<Vec<f64>> {
        if beta.len() != self.k_beta || theta.len() != self.k_theta() || psi.len() != self.k_psi {
            return Err(Error::shape(format!(
                "coefficients (β {}, θ {}, ψ {}) vs model (β {}, θ {}, ψ {})",
                beta.len(),
                theta.len(),
                psi.len(),
                self.k_beta,
                self.k_theta(),
                self.k_psi
            )));
        }
        let n3 = self.vertex_count * 3;
        let mut v = self.template.clone();
        let blend = |v: &mut [f64], coeffs: &[f64], basis: &[f64]| {
            for (k, &c) in coeffs.iter().enumerate() {
                if c != 0.0 {
                    for (dst, b) in v.iter_mut().zip(&basis[k * n3..(k + 1) * n3]) {
                        *dst += c * b;
                    }
                }
            }
        };
        blend(&mut v, beta, &self.shape_basis);
        blend(&mut v, psi, &self.expr_basis);
        blend(&mut v, &theta[GLOBAL_POSE_DIM..], &self.pose_basis);
        let r = kernels::axis_angle_matrix([theta[0], theta[1], theta[2]]);
        let c = self.rotation_center;
        for p in v.chunks_mut(3) {
            let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
            for i in 0..3 {
                p[i] = r[i * 3] * d[0] + r[i * 3 + 1] * d[1] + r[i * 3 + 2] * d[2] + c[i];
            }
        }
        Ok(v)
    }

    /// `N × V × 3` vertex trajectory for a motion sequence.
    pub fn decode_sequence(&self, motion: &MotionSequence) -> Result<Vec<f64>> {
        self.check_motion(motion)?;
        let mut out = Vec::with_capacity(motion.frames() * self.vertex_count * 3);
        for t in 0..motion.frames() {
            out.extend(self.decode_vertices(&motion.beta, motion.theta(t), motion.psi(t))?);
        }
        Ok(out)
    }

    pub fn check_motion(&self, motion: &MotionSequence) -> Result<()> {
        if motion.k_psi != self.k_psi || motion.k_theta != self.k_theta() || motion.beta.len() != self.k_beta {
            return Err(Error::shape(format!(
                "motion dims (ψ {}, θ {}, β {}) vs head model (ψ {}, θ {}, β {})",
                motion.k_psi,
                motion.k_theta,
                motion.beta.len(),
                self.k_psi,
                self.k_theta(),
                self.k_beta
            )));
        }
        Ok(())
    }

    /// Differentiable decode of `[N, K_ψ + K_θ]` motion features into `[N, V, 3]` vertices.
    pub fn decode_graph(&self, g: &mut Graph, motion: Var, beta: &[f64]) -> Result<Var> {
        let shape = g.shape(motion).to_vec();
        if shape.len() != 2 || shape[1] != self.motion_dim() || beta.len() != self.k_beta {
            return Err(Error::shape(format!(
                "decode_graph needs [N, {}] features and {} shape coefficients, got {shape:?} / {}",
                self.motion_dim(),
                self.k_beta,
                beta.len()
            )));
        }
        let (n, v) = (shape[0], self.vertex_count);
        let n3 = v * 3;
        // Rest pose: template plus identity shape, shared by all frames.
        let mut rest = self.template.clone();
        for (k, &c) in beta.iter().enumerate() {
            for (dst, b) in rest.iter_mut().zip(&self.shape_basis[k * n3..(k + 1) * n3]) {
                *dst += c * b;
            }
        }
        for p in rest.chunks_mut(3) {
            for i in 0..3 {
                p[i] -= self.rotation_center[i];
            }
        }
        let rest = g.leaf(Tensor::new(vec![1, n3], rest)?);
        let psi = g.slice(motion, 1, 0, self.k_psi)?;
        let expr = g.leaf(Tensor::new(vec![self.k_psi, n3], self.expr_basis.clone())?);
        let mut offsets = g.matmul(psi, expr)?;
        if self.k_pc > 0 {
            let start = self.k_psi + GLOBAL_POSE_DIM;
            let pc = g.slice(motion, 1, start, start + self.k_pc)?;
            let pose = g.leaf(Tensor::new(vec![self.k_pc, n3], self.pose_basis.clone())?);
            let pose_off = g.matmul(pc, pose)?;
            offsets = g.add(offsets, pose_off)?;
        }
        let local = g.add(offsets, rest)?;
        let local = g.reshape(local, vec![n, v, 3])?;
        let aa = g.slice(motion, 1, self.k_psi, self.k_psi + GLOBAL_POSE_DIM)?;
        let rot = g.apply(Op::AxisAngleToMatrix, &[aa])?;
        let rotated = g.matmul_t(local, rot, false, true)?;
        let center = g.leaf(Tensor::new(vec![3], self.rotation_center.to_vec())?);
        g.add(rotated, center)
    }

    pub fn to_json(&self) -> HeadModelJson {
        let v = self.vertex_count;
        let nest = |basis: &[f64], k: usize| -> Vec<Vec<Vec<f64>>> {
            (0..v)
                .map(|i| (0..3).map(|c| (0..k).map(|j| basis[j * v * 3 + i * 3 + c]).collect()).collect())
                .collect()
        };
        HeadModelJson {
            version: FORMAT_VERSION,
            v,
            k_beta: self.k_beta,
            k_psi: self.k_psi,
            k_pc: self.k_pc,
            template: self.template.chunks(3).map(|p| [p[0], p[1], p[2]]).collect(),
            shape_basis: nest(&self.shape_basis, self.k_beta),
            expr_basis: nest(&self.expr_basis, self.k_psi),
            pose_basis: nest(&self.pose_basis, self.k_pc),
            lip_indices: self.lip_indices.clone(),
            upper_face_indices: self.upper_face_indices.clone(),
            upper_lip_vertex: self.upper_lip_vertex,
            lower_lip_vertex: self.lower_lip_vertex,
            rotation_center: self.rotation_center,
        }
    }

    pub fn from_json(j: HeadModelJson) -> Result<Self> {
        let v = j.v;
        let flatten = |nested: &[Vec<Vec<f64>>], k: usize, what: &str| -> Result<Vec<f64>> {
            if nested.len() != v || nested.iter().any(|r| r.len() != 3 || r.iter().any(|c| c.len() != k)) {
                return Err(Error::format(format!("head model {what} must be {v}×3×{k}")));
            }
            let mut out = vec![0.0; k * v * 3];
            for (i, r) in nested.iter().enumerate() {
                for (c, coeffs) in r.iter().enumerate() {
                    for (jj, &x) in coeffs.iter().enumerate() {
                        out[jj * v * 3 + i * 3 + c] = x;
                    }
                }
            }
            Ok(out)
        };
        if j.template.len() != v {
            return Err(Error::format(format!("head model template has {} vertices, V = {v}", j.template.len())));
        }
        let model = HeadModel {
            vertex_count: v,
            k_beta: j.k_beta,
            k_psi: j.k_psi,
            k_pc: j.k_pc,
            template: j.template.iter().flatten().copied().collect(),
            shape_basis: flatten(&j.shape_basis, j.k_beta, "shape_basis")?,
            expr_basis: flatten(&j.expr_basis, j.k_psi, "expr_basis")?,
            pose_basis: flatten(&j.pose_basis, j.k_pc, "pose_basis")?,
            lip_indices: j.lip_indices,
            upper_face_indices: j.upper_face_indices,
            upper_lip_vertex: j.upper_lip_vertex,
            lower_lip_vertex: j.lower_lip_vertex,
            rotation_center: j.rotation_center,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(read_json(path)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadModelJson {
    pub version: u32,
    #[serde(rename = "V")]
    pub v: usize,
    #[serde(rename = "K_beta")]
    pub k_beta: usize,
    #[serde(rename = "K_psi")]
    pub k_psi: usize,
    #[serde(rename = "K_pc")]
    pub k_pc: usize,
    pub template: Vec<[f64; 3]>,
    pub shape_basis: Vec<Vec<Vec<f64>>>,
    pub expr_basis: Vec<Vec<Vec<f64>>>,
    pub pose_basis: Vec<Vec<Vec<f64>>>,
    pub lip_indices: Vec<usize>,
    pub upper_face_indices: Vec<usize>,
    pub upper_lip_vertex: usize,
    pub lower_lip_vertex: usize,
    pub rotation_center: [f64; 3],
}

/// Deterministic stand-in head model with FLAME-like structure.
///
/// The first `⌈V/5⌉` vertices are lips (even = upper lip, odd = lower lip), the
/// next `⌈V/5⌉` are upper face. Expression column 0 opens the mouth: it moves
/// upper-lip vertices up and lower-lip vertices down and barely touches the rest.
pub fn make_toy_head_model(seed: u64, v: usize, k_beta: usize, k_psi: usize, k_pc: usize) -> Result<HeadModel> {
    if v < 8 {
        return Err(Error::config(format!("toy head model needs V >= 8, got {v}")));
    }
    if k_psi == 0 {
        return Err(Error::config("toy head model needs at least one expression coefficient"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = move || -> f64 { StandardNormal.sample(&mut rng) };
    let n_lip = v.div_ceil(5);
    let n_upper = v.div_ceil(5);
    let mouth = [0.0, -0.45, 0.85];
    let mut template = Vec::with_capacity(v * 3);
    for i in 0..v {
        let p = if i < n_lip {
            let pairs = n_lip.div_ceil(2).max(2) - 1;
            let x = -0.25 + 0.5 * (i / 2) as f64 / pairs as f64;
            let dy = if i % 2 == 0 { 0.04 } else { -0.04 };
            [mouth[0] + x, mouth[1] + dy, mouth[2]]
        } else {
            // random direction on an ellipsoid; upper-face vertices forced to the top half
            let mut d = [gauss(), gauss(), gauss()];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
            d.iter_mut().for_each(|x| *x /= n);
            if i < n_lip + n_upper {
                d[1] = 0.3 + 0.7 * d[1].abs();
                d[2] = d[2].abs();
            }
            [0.8 * d[0], 1.0 * d[1], 0.9 * d[2]]
        };
        template.extend_from_slice(&p);
    }
    let n3 = v * 3;
    let mut random_basis = |k: usize| -> Vec<f64> {
        let mut b = Vec::with_capacity(k * n3);
        for _ in 0..k {
            let mut col: Vec<f64> = (0..n3).map(|_| gauss()).collect();
            normalize(&mut col);
            b.extend(col);
        }
        b
    };
    let shape_basis = random_basis(k_beta);
    let mut expr_basis = random_basis(k_psi);
    let pose_basis = random_basis(k_pc);
    // mouth-open column
    {
        let col = &mut expr_basis[..n3];
        for (i, p) in col.chunks_mut(3).enumerate() {
            if i < n_lip {
                let dir = if i % 2 == 0 { 1.0 } else { -1.0 };
                p[0] *= 0.02;
                p[1] = dir * (1.0 + 0.05 * p[1]);
                p[2] *= 0.02;
            } else {
                p.iter_mut().for_each(|x| *x *= 0.03);
            }
        }
        normalize(col);
    }
    let model = HeadModel {
        vertex_count: v,
        k_beta,
        k_psi,
        k_pc,
        template,
        shape_basis,
        expr_basis,
        pose_basis,
        lip_indices: (0..n_lip).collect(),
        upper_face_indices: (n_lip..n_lip + n_upper).collect(),
        upper_lip_vertex: 0,
        lower_lip_vertex: 1,
        rotation_center: [0.0, 0.0, 0.0],
    };
    model.validate()?;
    Ok(model)
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// Per-frame expression ψ and pose θ with a constant shape β.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    pub k_psi: usize,
    pub k_theta: usize,
    pub beta: Vec<f64>,
    /// `N × (K_ψ + K_θ)` row-major: `[ψ, θ]` per frame.
    features: Vec<f64>,
}

impl MotionSequence {
    pub fn new(fps: f64, k_psi: usize, k_theta: usize, beta: Vec<f64>, features: Vec<f64>) -> Result<Self> {
        let width = k_psi + k_theta;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::format(format!("fps must be positive, got {fps}")));
        }
        if k_theta < GLOBAL_POSE_DIM {
            return Err(Error::format(format!("K_theta must be at least {GLOBAL_POSE_DIM}")));
        }
        if features.is_empty() || features.len() % width != 0 {
            return Err(Error::format(format!(
                "motion needs N >= 1 frames of width {width}, got {} values",
                features.len()
            )));
        }
        if features.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::format("non-finite motion values"));
        }
        Ok(MotionSequence {
            fps,
            k_psi,
            k_theta,
            beta,
            features,
        })
    }

    pub fn width(&self) -> usize {
        self.k_psi + self.k_theta
    }

    pub fn frames(&self) -> usize {
        self.features.len() / self.width()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.width();
        &self.features[t * w..(t + 1) * w]
    }

    pub fn psi(&self, t: usize) -> &[f64] {
        &self.frame(t)[..self.k_psi]
    }

    pub fn theta(&self, t: usize) -> &[f64] {
        &self.frame(t)[self.k_psi..]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Frames `[start, start + len)` as a `[len, width]` tensor.
    pub fn window_tensor(&self, start: usize, len: usize) -> Result<Tensor> {
        if start + len > self.frames() {
            return Err(Error::shape(format!(
                "window {start}..{} exceeds {} frames",
                start + len,
                self.frames()
            )));
        }
        let w = self.width();
        Tensor::new(vec![len, w], self.features[start * w..(start + len) * w].to_vec())
    }

    /// Sub-sequence of frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let t = self.window_tensor(start, len)?;
        MotionSequence::new(self.fps, self.k_psi, self.k_theta, self.beta.clone(), t.into_data())
    }

    pub fn truncated(&self, frames: usize) -> Result<Self> {
        self.slice(0, frames.min(self.frames()))
    }

    pub fn to_json(&self) -> MotionJson {
        MotionJson {
            version: FORMAT_VERSION,
            fps: self.fps,
            k_psi: self.k_psi,
            k_theta: self.k_theta,
            beta: self.beta.clone(),
            frames: (0..self.frames())
                .map(|t| MotionFrame {
                    psi: self.psi(t).to_vec(),
                    theta: self.theta(t).to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_json(j: MotionJson) -> Result<Self> {
        let mut features = Vec::with_capacity(j.frames.len() * (j.k_psi + j.k_theta));
        for (t, f) in j.frames.iter().enumerate() {
            if f.psi.len() != j.k_psi || f.theta.len() != j.k_theta {
                return Err(Error::format(format!(
                    "frame {t}: psi/theta lengths {}/{} vs declared {}/{}",
                    f.psi.len(),
                    f.theta.len(),
                    j.k_psi,
                    j.k_theta
                )));
            }
            features.extend_from_slice(&f.psi);
            features.extend_from_slice(&f.theta);
        }
        MotionSequence::new(j.fps, j.k_psi, j.k_theta, j.beta, features)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(read_json(path)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MotionJson {
    pub version: u32,
    pub fps: f64,
    #[serde(rename = "K_psi")]
    pub k_psi: usize,
    #[serde(rename = "K_theta")]
    pub k_theta: usize,
    pub beta: Vec<f64>,
    pub frames: Vec<MotionFrame>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MotionFrame {
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy() -> HeadModel {
        make_toy_head_model(3, 50, 4, 10, 3).unwrap()
    }

    #[test]
    fn zero_coefficients_give_template() {
        let m = toy();
        let v = m.decode_vertices(&[0.0; 4], &[0.0; 6], &[0.0; 10]).unwrap();
        assert_eq!(v, m.template);
    }

    #[test]
    fn unit_shape_coefficient_adds_first_column() {
        let m = toy();
        let v = m.decode_vertices(&[1.0, 0.0, 0.0, 0.0], &[0.0; 6], &[0.0; 10]).unwrap();
        for i in 0..150 {
            assert!((v[i] - (m.template[i] + m.shape_basis[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn half_turn_about_z() {
        let mut m = make_toy_head_model(0, 8, 0, 1, 0).unwrap();
        m.template = vec![0.0; 24];
        m.template[0] = 1.0;
        let v = m.decode_vertices(&[], &[0.0, 0.0, std::f64::consts::PI], &[0.0]).unwrap();
        assert!((v[0] + 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
    }

    #[test]
    fn toy_model_region_sizes_and_determinism() {
        let a = toy();
        assert_eq!(a.lip_indices.len(), 10);
        assert_eq!(a.upper_face_indices.len(), 10);
        assert_eq!(a, toy());
        assert!(make_toy_head_model(0, 7, 1, 1, 1).is_err());
    }

    #[test]
    fn mouth_open_column_moves_lips_most() {
        let m = toy();
        let mut psi = [0.0; 10];
        psi[0] = 1.0;
        let v = m.decode_vertices(&[0.0; 4], &[0.0; 6], &psi).unwrap();
        let disp = |i: usize| -> f64 {
            (0..3).map(|c| (v[i * 3 + c] - m.template[i * 3 + c]).powi(2)).sum::<f64>().sqrt()
        };
        let lip = m.lip_indices.iter().map(|&i| disp(i)).sum::<f64>() / m.lip_indices.len() as f64;
        let others: Vec<usize> = (0..50).filter(|i| !m.lip_indices.contains(i)).collect();
        let rest = others.iter().map(|&i| disp(i)).sum::<f64>() / others.len() as f64;
        assert!(lip > 5.0 * rest, "lip {lip} vs rest {rest}");
        // upper lip moves up, lower lip moves down
        assert!(v[1] > m.template[1] && v[4] < m.template[4]);
    }

    #[test]
    fn rotation_preserves_distances() {
        let m = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let theta: Vec<f64> = (0..6).map(|i| if i < 3 { rng.gen_range(-2.0..2.0) } else { 0.0 }).collect();
            let a = m.decode_vertices(&[0.0; 4], &[0.0; 6], &[0.0; 10]).unwrap();
            let b = m.decode_vertices(&[0.0; 4], &theta, &[0.0; 10]).unwrap();
            for (i, j) in [(0, 7), (3, 41), (12, 49)] {
                let d = |v: &[f64]| (0..3).map(|c| (v[i * 3 + c] - v[j * 3 + c]).powi(2)).sum::<f64>().sqrt();
                assert!((d(&a) - d(&b)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn linear_in_coefficients_at_fixed_rotation() {
        let m = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let rot = draw(3);
        let (ba, bb) = (draw(4), draw(4));
        let (pa, pb) = (draw(10), draw(10));
        let (ca, cb) = (draw(3), draw(3));
        let th = |c: &[f64]| -> Vec<f64> { rot.iter().chain(c).copied().collect() };
        let sum = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
        let fa = m.decode_vertices(&ba, &th(&ca), &pa).unwrap();
        let fb = m.decode_vertices(&bb, &th(&cb), &pb).unwrap();
        let fab = m.decode_vertices(&sum(&ba, &bb), &th(&sum(&ca, &cb)), &sum(&pa, &pb)).unwrap();
        let f0 = m.decode_vertices(&[0.0; 4], &th(&[0.0; 3]), &[0.0; 10]).unwrap();
        for i in 0..150 {
            assert!((fab[i] - (fa[i] + fb[i] - f0[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_decode_matches_per_frame_decode() {
        let m = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let feats: Vec<f64> = (0..3 * 16).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let beta: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let motion = MotionSequence::new(25.0, 10, 6, beta.clone(), feats.clone()).unwrap();
        let seq = m.decode_sequence(&motion).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3, 16], feats).unwrap());
        let v = m.decode_graph(&mut g, x, &beta).unwrap();
        assert_eq!(g.shape(v), &[3, 50, 3]);
        for t in 0..3 {
            let frame = m.decode_vertices(&beta, motion.theta(t), motion.psi(t)).unwrap();
            for i in 0..150 {
                assert!((seq[t * 150 + i] - frame[i]).abs() == 0.0);
                assert!((g.value(v).data()[t * 150 + i] - frame[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_motion_gives_identical_frames() {
        let m = toy();
        let frame: Vec<f64> = (0..16).map(|i| 0.05 * i as f64).collect();
        let feats: Vec<f64> = frame.iter().cycle().take(16 * 4).copied().collect();
        let motion = MotionSequence::new(25.0, 10, 6, vec![0.0; 4], feats).unwrap();
        let seq = m.decode_sequence(&motion).unwrap();
        for t in 1..4 {
            assert_eq!(&seq[..150], &seq[t * 150..(t + 1) * 150]);
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let m = toy();
        assert!(matches!(
            m.decode_vertices(&[0.0; 4], &[0.0; 5], &[0.0; 10]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn json_roundtrip() {
        let m = toy();
        let back = HeadModel::from_json(serde_json::from_str(&serde_json::to_string(&m.to_json()).unwrap()).unwrap())
            .unwrap();
        assert_eq!(m, back);
    }
}
