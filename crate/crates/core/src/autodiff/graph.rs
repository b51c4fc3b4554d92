//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! Every op appends a node holding its output value and the ids of its inputs;
//! node ids are therefore already a topological order and backward simply walks
//! the tape from the output towards the leaves.

use super::kernels::{self, MatView};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable operations with their attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    /// Multiply by a constant.
    Scale(f64),
    /// Add a constant.
    Shift(f64),
    MatMul { trans_a: bool, trans_b: bool },
    /// Axis permutation; `None` swaps the last two axes.
    Transpose(Option<Vec<usize>>),
    Reshape(Vec<usize>),
    Slice { axis: usize, start: usize, end: usize },
    Concat { axis: usize },
    /// Sum over one axis (kept with extent 1) or everything (shape `[1]`).
    Sum(Option<usize>),
    Mean(Option<usize>),
    Softmax,
    LayerNorm { eps: f64 },
    Gelu,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Abs,
    ClampMin(f64),
    /// Euclidean norm over the last axis (kept with extent 1).
    L2Norm,
    /// Align-corners linear resize of axis 0 of a rank-2 `[time, channels]` input.
    LinearResizeTime { target: usize },
    /// Rotary rotation of the last axis (half-split pairs) of a `[.., T, d]` input.
    RopeRotate { positions: Vec<f64>, freqs: Vec<f64> },
    GatherRows { indices: Vec<usize> },
    /// Forward value of input 0, gradient routed to input 1.
    PassThrough,
    StopGradient,
    /// Elementwise binary cross-entropy of logits (input 0) against targets in [0, 1] (input 1).
    BceWithLogits,
    /// `[N, 3]` axis-angle vectors to `[N, 3, 3]` Rodrigues rotation matrices.
    AxisAngleToMatrix,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Scale(_) => "scale",
            Op::Shift(_) => "shift",
            Op::MatMul { .. } => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Softmax => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu => "gelu",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Abs => "abs",
            Op::ClampMin(_) => "clamp_min",
            Op::L2Norm => "l2_norm",
            Op::LinearResizeTime { .. } => "linear_resize_time",
            Op::RopeRotate { .. } => "rope_rotate",
            Op::GatherRows { .. } => "gather_rows",
            Op::PassThrough => "pass_through",
            Op::StopGradient => "stop_gradient",
            Op::BceWithLogits => "bce_with_logits",
            Op::AxisAngleToMatrix => "axis_angle_to_matrix",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::MatMul { .. } | Op::PassThrough | Op::BceWithLogits => {
                Some(2)
            }
            Op::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

struct Node {
    value: Tensor,
    op: Option<Op>,
    inputs: Vec<Var>,
    /// Per-op saved state (layer-norm inverse std).
    aux: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor (parameter, data or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), Vec::new())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by [`Graph::backward`], if the node was reachable.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::new(self.shape(v).to_vec(), g.clone()).expect("gradient shape"))
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    fn push(&mut self, value: Tensor, op: Option<Op>, inputs: Vec<Var>, aux: Vec<f64>) -> Var {
        self.nodes.push(Node { value, op, inputs, aux });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `op` on `inputs` and records it for differentiation.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = op.arity() {
            if inputs.len() != n {
                return Err(Error::shape(format!(
                    "{} takes {n} inputs, got {}",
                    op.name(),
                    inputs.len()
                )));
            }
        } else if inputs.is_empty() {
            return Err(Error::shape(format!("{} needs at least one input", op.name())));
        }
        let (value, aux) = self.forward(&op, inputs)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite output from {}", op.name())));
        }
        Ok(self.push(value, Some(op), inputs.to_vec(), aux))
    }

    fn forward(&self, op: &Op, inputs: &[Var]) -> Result<(Tensor, Vec<f64>)> {
        let x = self.value(inputs[0]);
        let unary = |f: &dyn Fn(f64) -> f64| Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect());
        let out = match op {
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                let y = self.value(inputs[1]);
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add => |a, b| a + b,
                    Op::Sub => |a, b| a - b,
                    Op::Mul => |a, b| a * b,
                    _ => |a, b| a / b,
                };
                if matches!(op, Op::Div) && y.data().iter().any(|&b| b == 0.0) {
                    return Err(Error::Domain("division by zero".into()));
                }
                return Ok((binary(x, y, f)?, Vec::new()));
            }
            Op::Scale(c) => unary(&|v| v * c)?,
            Op::Shift(c) => unary(&|v| v + c)?,
            Op::MatMul { trans_a, trans_b } => matmul_forward(x, self.value(inputs[1]), *trans_a, *trans_b)?,
            Op::Transpose(perm) => {
                let perm = resolve_perm(perm.as_deref(), x.rank())?;
                let (data, shape) = kernels::permute(x.data(), x.shape(), &perm);
                Tensor::new(shape, data)?
            }
            Op::Reshape(shape) => x.clone().reshape(shape.clone())?,
            Op::Slice { axis, start, end } => {
                let (outer, extent, inner) = split_axis(x.shape(), *axis)?;
                if start >= end || *end > extent {
                    return Err(Error::shape(format!("slice {start}..{end} out of range for extent {extent}")));
                }
                let len = end - start;
                let mut data = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = o * extent * inner;
                    data.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
                }
                let mut shape = x.shape().to_vec();
                shape[*axis] = len;
                Tensor::new(shape, data)?
            }
            Op::Concat { axis } => {
                let first = x.shape();
                let (outer, _, inner) = split_axis(first, *axis)?;
                let mut total = 0;
                for v in inputs {
                    let s = self.shape(*v);
                    if s.len() != first.len()
                        || s.iter().enumerate().any(|(i, &e)| i != *axis && e != first[i])
                    {
                        return Err(Error::shape(format!("concat of {first:?} with {s:?} on axis {axis}")));
                    }
                    total += s[*axis];
                }
                let mut data = Vec::with_capacity(outer * total * inner);
                for o in 0..outer {
                    for v in inputs {
                        let t = self.value(*v);
                        let e = t.shape()[*axis];
                        data.extend_from_slice(&t.data()[o * e * inner..(o + 1) * e * inner]);
                    }
                }
                let mut shape = first.to_vec();
                shape[*axis] = total;
                Tensor::new(shape, data)?
            }
            Op::Sum(axis) | Op::Mean(axis) => {
                let mean = matches!(op, Op::Mean(_));
                match axis {
                    None => {
                        let s: f64 = x.data().iter().sum();
                        Tensor::scalar(if mean { s / x.numel() as f64 } else { s })
                    }
                    Some(axis) => {
                        let (outer, extent, inner) = split_axis(x.shape(), *axis)?;
                        let mut data = vec![0.0; outer * inner];
                        for o in 0..outer {
                            for e in 0..extent {
                                let src = &x.data()[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        if mean {
                            data.iter_mut().for_each(|d| *d /= extent as f64);
                        }
                        let mut shape = x.shape().to_vec();
                        shape[*axis] = 1;
                        Tensor::new(shape, data)?
                    }
                }
            }
            Op::Softmax => {
                let cols = x.cols();
                let mut data = x.data().to_vec();
                for row in data.chunks_mut(cols) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                }
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::LayerNorm { eps } => {
                let cols = x.cols();
                let mut data = x.data().to_vec();
                let mut rstds = Vec::with_capacity(x.rows());
                for row in data.chunks_mut(cols) {
                    let mean = row.iter().sum::<f64>() / cols as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                    let rstd = 1.0 / (var + eps).sqrt();
                    for v in row.iter_mut() {
                        *v = (*v - mean) * rstd;
                    }
                    rstds.push(rstd);
                }
                return Ok((Tensor::new(x.shape().to_vec(), data)?, rstds));
            }
            Op::Gelu => unary(&kernels::gelu)?,
            Op::Relu => unary(&|v| v.max(0.0))?,
            Op::Sigmoid => unary(&kernels::sigmoid)?,
            Op::Exp => unary(&f64::exp)?,
            Op::Log => {
                if x.data().iter().any(|&v| v <= 0.0) {
                    return Err(Error::Domain("log of non-positive value".into()));
                }
                unary(&f64::ln)?
            }
            Op::Sqrt => {
                if x.data().iter().any(|&v| v < 0.0) {
                    return Err(Error::Domain("sqrt of negative value".into()));
                }
                unary(&f64::sqrt)?
            }
            Op::Abs => unary(&f64::abs)?,
            Op::ClampMin(lo) => unary(&|v| v.max(*lo))?,
            Op::L2Norm => {
                let cols = x.cols();
                let data = x
                    .data()
                    .chunks(cols)
                    .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .collect();
                let mut shape = x.shape().to_vec();
                *shape.last_mut().unwrap() = 1;
                Tensor::new(shape, data)?
            }
            Op::LinearResizeTime { target } => {
                if x.rank() != 2 || *target == 0 {
                    return Err(Error::shape(format!(
                        "linear_resize_time needs [time, channels] and a positive target, got {:?} -> {target}",
                        x.shape()
                    )));
                }
                let (src, ch) = (x.shape()[0], x.shape()[1]);
                Tensor::new(vec![*target, ch], kernels::resize_rows(x.data(), src, ch, *target))?
            }
            Op::RopeRotate { positions, freqs } => {
                let (t, d) = rope_dims(x.shape(), positions, freqs)?;
                let mut data = x.data().to_vec();
                rope_apply(&mut data, t, d, positions, freqs, 1.0);
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::GatherRows { indices } => {
                if x.rank() != 2 {
                    return Err(Error::shape("gather_rows needs a rank-2 table"));
                }
                let (n, d) = (x.shape()[0], x.shape()[1]);
                let mut data = Vec::with_capacity(indices.len() * d);
                for &i in indices {
                    if i >= n {
                        return Err(Error::shape(format!("row index {i} out of range {n}")));
                    }
                    data.extend_from_slice(x.row(i));
                }
                Tensor::new(vec![indices.len(), d], data)?
            }
            Op::PassThrough => {
                let s = self.value(inputs[1]);
                if s.shape() != x.shape() {
                    return Err(Error::shape(format!(
                        "pass_through target {:?} vs surrogate {:?}",
                        x.shape(),
                        s.shape()
                    )));
                }
                x.clone()
            }
            Op::StopGradient => x.clone(),
            Op::BceWithLogits => {
                let t = self.value(inputs[1]);
                if t.shape() != x.shape() {
                    return Err(Error::shape(format!("bce logits {:?} vs targets {:?}", x.shape(), t.shape())));
                }
                let data = x
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::AxisAngleToMatrix => {
                if x.rank() != 2 || x.shape()[1] != 3 {
                    return Err(Error::shape(format!("axis_angle_to_matrix needs [N, 3], got {:?}", x.shape())));
                }
                let n = x.shape()[0];
                let mut data = Vec::with_capacity(n * 9);
                for r in x.data().chunks(3) {
                    data.extend_from_slice(&kernels::axis_angle_matrix([r[0], r[1], r[2]]));
                }
                Tensor::new(vec![n, 3, 3], data)?
            }
        };
        Ok((out, Vec::new()))
    }

    /// Accumulates d(output)/d(node) into every node reachable from `output`.
    ///
    /// Repeated calls add onto the existing gradients until [`Graph::zero_grad`].
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.value(output).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a single-element output, got {:?}",
                self.shape(output)
            )));
        }
        let n = output.0 + 1;
        let mut reachable = vec![false; n];
        reachable[output.0] = true;
        for i in (0..n).rev() {
            if reachable[i] {
                for v in &self.nodes[i].inputs {
                    reachable[v.0] = true;
                }
            }
        }
        // Local gradients for this pass; merged into `self.grads` at the end.
        let mut local: Vec<Option<Vec<f64>>> = vec![None; n];
        local[output.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            if !reachable[i] {
                continue;
            }
            let g = match local[i].take() {
                Some(g) => g,
                None => vec![0.0; self.nodes[i].value.numel()],
            };
            if self.nodes[i].op.is_some() {
                self.backward_node(i, &g, &mut local)?;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient at node {i}")));
            }
            local[i] = Some(g);
        }
        if self.grads.len() < n {
            self.grads.resize(n, None);
        }
        for (i, g) in local.into_iter().enumerate() {
            if let Some(g) = g {
                match &mut self.grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let op = node.op.as_ref().expect("op node");
        let inputs = &node.inputs;
        let out = &node.value;
        let x = self.value(inputs[0]);
        let nodes = &self.nodes;
        fn slot<'a>(nodes: &[Node], local: &'a mut [Option<Vec<f64>>], v: Var) -> &'a mut Vec<f64> {
            local[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()])
        }
        match op {
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                let y = self.value(inputs[1]);
                let plan = BroadcastPlan::new(x.shape(), y.shape())?;
                let (xd, yd) = (x.data(), y.data());
                {
                    let gx = slot(nodes, local, inputs[0]);
                    kernels::for_each_broadcast(&plan.out, &plan.a, &plan.b, |o, a, b| {
                        gx[a] += match op {
                            Op::Add | Op::Sub => g[o],
                            Op::Mul => g[o] * yd[b],
                            _ => g[o] / yd[b],
                        };
                    });
                }
                let gy = slot(nodes, local, inputs[1]);
                kernels::for_each_broadcast(&plan.out, &plan.a, &plan.b, |o, a, b| {
                    gy[b] += match op {
                        Op::Add => g[o],
                        Op::Sub => -g[o],
                        Op::Mul => g[o] * xd[a],
                        _ => -g[o] * xd[a] / (yd[b] * yd[b]),
                    };
                });
            }
            Op::Scale(c) => slot(nodes, local, inputs[0]).iter_mut().zip(g).for_each(|(a, gv)| *a += c * gv),
            Op::Shift(_) | Op::Reshape(_) => slot(nodes, local, inputs[0]).iter_mut().zip(g).for_each(|(a, gv)| *a += gv),
            Op::StopGradient => {
                slot(nodes, local, inputs[0]);
            }
            Op::MatMul { trans_a, trans_b } => {
                let y = self.value(inputs[1]);
                let dims = MatmulDims::new(x.shape(), y.shape(), *trans_a, *trans_b)?;
                // Separate buffers: both operands may be the same node.
                let mut ga = vec![0.0; x.numel()];
                let mut gb = vec![0.0; y.numel()];
                let cv = MatView::row_major(dims.m, dims.n);
                for bi in 0..dims.batch {
                    let (ao, bo, co) = dims.offsets(bi);
                    let gc = &g[co..co + dims.m * dims.n];
                    // dA_eff = dC · B_effᵀ, dB_eff = A_effᵀ · dC
                    kernels::gemm(gc, cv, &y.data()[bo..], dims.b_view.t(), &mut ga[ao..], dims.a_view, true);
                    kernels::gemm(&x.data()[ao..], dims.a_view.t(), gc, cv, &mut gb[bo..], dims.b_view, true);
                }
                slot(nodes, local, inputs[0]).iter_mut().zip(&ga).for_each(|(a, b)| *a += b);
                slot(nodes, local, inputs[1]).iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
            }
            Op::Transpose(perm) => {
                let perm = resolve_perm(perm.as_deref(), x.rank())?;
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (back, _) = kernels::permute(g, out.shape(), &inv);
                slot(nodes, local, inputs[0]).iter_mut().zip(&back).for_each(|(a, b)| *a += b);
            }
            Op::Slice { axis, start, end } => {
                let (outer, extent, inner) = split_axis(x.shape(), *axis)?;
                let len = end - start;
                let gx = slot(nodes, local, inputs[0]);
                for o in 0..outer {
                    let dst = &mut gx[o * extent * inner + start * inner..o * extent * inner + end * inner];
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                }
            }
            Op::Concat { axis } => {
                let (outer, _, inner) = split_axis(x.shape(), *axis)?;
                let total = out.shape()[*axis];
                let mut offset = 0;
                for v in inputs {
                    let e = self.shape(*v)[*axis];
                    let gv = slot(nodes, local, *v);
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + e) * inner];
                        gv[o * e * inner..(o + 1) * e * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, b)| *a += b);
                    }
                    offset += e;
                }
            }
            Op::Sum(axis) | Op::Mean(axis) => {
                let mean = matches!(op, Op::Mean(_));
                let gx = slot(nodes, local, inputs[0]);
                match axis {
                    None => {
                        let s = if mean { g[0] / x.numel() as f64 } else { g[0] };
                        gx.iter_mut().for_each(|a| *a += s);
                    }
                    Some(axis) => {
                        let (outer, extent, inner) = split_axis(x.shape(), *axis)?;
                        let scale = if mean { 1.0 / extent as f64 } else { 1.0 };
                        for o in 0..outer {
                            for e in 0..extent {
                                let dst = &mut gx[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                                for (d, s) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                    *d += s * scale;
                                }
                            }
                        }
                    }
                }
            }
            Op::Softmax => {
                let cols = out.cols();
                let gx = slot(nodes, local, inputs[0]);
                for ((yr, gr), dr) in out.data().chunks(cols).zip(g.chunks(cols)).zip(gx.chunks_mut(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for c in 0..cols {
                        dr[c] += yr[c] * (gr[c] - dot);
                    }
                }
            }
            Op::LayerNorm { .. } => {
                let cols = out.cols();
                let n = cols as f64;
                let gx = slot(nodes, local, inputs[0]);
                for (r, ((yr, gr), dr)) in out
                    .data()
                    .chunks(cols)
                    .zip(g.chunks(cols))
                    .zip(gx.chunks_mut(cols))
                    .enumerate()
                {
                    let rstd = node.aux[r];
                    let gmean = gr.iter().sum::<f64>() / n;
                    let gymean = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / n;
                    for c in 0..cols {
                        dr[c] += rstd * (gr[c] - gmean - yr[c] * gymean);
                    }
                }
            }
            Op::Gelu | Op::Relu | Op::Sigmoid | Op::Exp | Op::Log | Op::Sqrt | Op::Abs | Op::ClampMin(_) => {
                let gx = slot(nodes, local, inputs[0]);
                for k in 0..g.len() {
                    let (xv, yv) = (x.data()[k], out.data()[k]);
                    let d = match op {
                        Op::Gelu => kernels::gelu_grad(xv),
                        Op::Relu => f64::from(u8::from(xv > 0.0)),
                        Op::Sigmoid => yv * (1.0 - yv),
                        Op::Exp => yv,
                        Op::Log => 1.0 / xv,
                        Op::Sqrt => 0.5 / yv,
                        Op::Abs => {
                            if xv > 0.0 {
                                1.0
                            } else if xv < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        Op::ClampMin(lo) => f64::from(u8::from(xv > *lo)),
                        _ => unreachable!(),
                    };
                    gx[k] += g[k] * d;
                }
            }
            Op::L2Norm => {
                let cols = x.cols();
                let gx = slot(nodes, local, inputs[0]);
                for (r, (xr, dr)) in x.data().chunks(cols).zip(gx.chunks_mut(cols)).enumerate() {
                    let norm = out.data()[r];
                    if norm > 0.0 {
                        for c in 0..cols {
                            dr[c] += g[r] * xr[c] / norm;
                        }
                    }
                }
            }
            Op::LinearResizeTime { target } => {
                let (src, ch) = (x.shape()[0], x.shape()[1]);
                kernels::resize_rows_adjoint(g, src, ch, *target, slot(nodes, local, inputs[0]));
            }
            Op::RopeRotate { positions, freqs } => {
                let (t, d) = rope_dims(x.shape(), positions, freqs)?;
                let mut back = g.to_vec();
                rope_apply(&mut back, t, d, positions, freqs, -1.0);
                slot(nodes, local, inputs[0]).iter_mut().zip(&back).for_each(|(a, b)| *a += b);
            }
            Op::GatherRows { indices } => {
                let d = x.shape()[1];
                let gx = slot(nodes, local, inputs[0]);
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..d {
                        gx[i * d + c] += g[r * d + c];
                    }
                }
            }
            Op::PassThrough => {
                slot(nodes, local, inputs[0]);
                slot(nodes, local, inputs[1]).iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            Op::BceWithLogits => {
                let t = self.value(inputs[1]);
                {
                    let gx = slot(nodes, local, inputs[0]);
                    for k in 0..g.len() {
                        gx[k] += g[k] * (kernels::sigmoid(x.data()[k]) - t.data()[k]);
                    }
                }
                let gt = slot(nodes, local, inputs[1]);
                for k in 0..g.len() {
                    gt[k] -= g[k] * x.data()[k];
                }
            }
            Op::AxisAngleToMatrix => {
                let gx = slot(nodes, local, inputs[0]);
                for (r, w) in x.data().chunks(3).enumerate() {
                    let w = [w[0], w[1], w[2]];
                    let gr = &g[r * 9..(r + 1) * 9];
                    let dr = rodrigues_jacobian(w);
                    for c in 0..3 {
                        gx[r * 3 + c] += (0..9).map(|e| gr[e] * dr[c][e]).sum::<f64>();
                    }
                }
            }
        }
        Ok(())
    }

    // ---- convenience wrappers -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Div, &[a, b])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Op::Scale(c), &[a])
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul { trans_a: false, trans_b: false }, &[a, b])
    }
    pub fn matmul_t(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        self.apply(Op::MatMul { trans_a, trans_b }, &[a, b])
    }
    pub fn transpose(&mut self, a: Var, perm: Option<Vec<usize>>) -> Result<Var> {
        self.apply(Op::Transpose(perm), &[a])
    }
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Op::Reshape(shape), &[a])
    }
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.apply(Op::Slice { axis, start, end }, &[a])
    }
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        self.apply(Op::Concat { axis }, xs)
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sum(None), &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Mean(None), &[a])
    }
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Softmax, &[a])
    }
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.apply(Op::LayerNorm { eps }, &[a])
    }
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Gelu, &[a])
    }
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Abs, &[a])
    }
    pub fn resize_time(&mut self, a: Var, target: usize) -> Result<Var> {
        if self.shape(a)[0] == target {
            return Ok(a);
        }
        self.apply(Op::LinearResizeTime { target }, &[a])
    }
    pub fn rope(&mut self, a: Var, positions: Vec<f64>, freqs: Vec<f64>) -> Result<Var> {
        self.apply(Op::RopeRotate { positions, freqs }, &[a])
    }
    pub fn pass_through(&mut self, target: Var, surrogate: Var) -> Result<Var> {
        self.apply(Op::PassThrough, &[target, surrogate])
    }
    pub fn stop_gradient(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::StopGradient, &[a])
    }
}

struct BroadcastPlan {
    out: Vec<usize>,
    a: Vec<usize>,
    b: Vec<usize>,
}

impl BroadcastPlan {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let out = kernels::broadcast_shape(a, b)?;
        Ok(BroadcastPlan {
            a: kernels::broadcast_strides(a, &out),
            b: kernels::broadcast_strides(b, &out),
            out,
        })
    }
}

fn binary(x: &Tensor, y: &Tensor, f: fn(f64, f64) -> f64) -> Result<Tensor> {
    if x.shape() == y.shape() {
        let data = x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect();
        return Tensor::new(x.shape().to_vec(), data);
    }
    let plan = BroadcastPlan::new(x.shape(), y.shape())?;
    let numel = plan.out.iter().product();
    let mut data = vec![0.0; numel];
    let (xd, yd) = (x.data(), y.data());
    kernels::for_each_broadcast(&plan.out, &plan.a, &plan.b, |o, a, b| data[o] = f(xd[a], yd[b]));
    Tensor::new(plan.out, data)
}

fn resolve_perm(perm: Option<&[usize]>, rank: usize) -> Result<Vec<usize>> {
    match perm {
        Some(p) => {
            let mut seen = vec![false; rank];
            if p.len() != rank || p.iter().any(|&i| i >= rank || std::mem::replace(&mut seen[i], true)) {
                return Err(Error::shape(format!("invalid permutation {p:?} for rank {rank}")));
            }
            Ok(p.to_vec())
        }
        None => {
            if rank < 2 {
                return Err(Error::shape("transpose needs rank >= 2"));
            }
            let mut p: Vec<usize> = (0..rank).collect();
            p.swap(rank - 2, rank - 1);
            Ok(p)
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

struct MatmulDims {
    batch: usize,
    m: usize,
    n: usize,
    a_view: MatView,
    b_view: MatView,
    a_batch_stride: usize,
    b_batch_stride: usize,
    out_shape: Vec<usize>,
}

impl MatmulDims {
    fn new(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<Self> {
        let bad = || Error::shape(format!("matmul of {a:?} and {b:?} (trans {ta}/{tb})"));
        if a.len() < 2 || b.len() < 2 || a.len() > 3 || b.len() > 3 {
            return Err(bad());
        }
        let (ar, ac) = (a[a.len() - 2], a[a.len() - 1]);
        let (br, bc) = (b[b.len() - 2], b[b.len() - 1]);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(bad());
        }
        let ab = if a.len() == 3 { a[0] } else { 1 };
        let bb = if b.len() == 3 { b[0] } else { 1 };
        if a.len() == 3 && b.len() == 3 && ab != bb {
            return Err(bad());
        }
        let batch = ab.max(bb);
        let stored_a = MatView::row_major(ar, ac);
        let stored_b = MatView::row_major(br, bc);
        let mut out_shape = vec![m, n];
        if a.len() == 3 || b.len() == 3 {
            out_shape.insert(0, batch);
        }
        Ok(MatmulDims {
            batch,
            m,
            n,
            a_view: if ta { stored_a.t() } else { stored_a },
            b_view: if tb { stored_b.t() } else { stored_b },
            a_batch_stride: if a.len() == 3 { ar * ac } else { 0 },
            b_batch_stride: if b.len() == 3 { br * bc } else { 0 },
            out_shape,
        })
    }

    fn offsets(&self, bi: usize) -> (usize, usize, usize) {
        (bi * self.a_batch_stride, bi * self.b_batch_stride, bi * self.m * self.n)
    }
}

fn matmul_forward(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    let dims = MatmulDims::new(a.shape(), b.shape(), ta, tb)?;
    let mut out = vec![0.0; dims.batch * dims.m * dims.n];
    for bi in 0..dims.batch {
        let (ao, bo, co) = dims.offsets(bi);
        kernels::gemm(
            &a.data()[ao..],
            dims.a_view,
            &b.data()[bo..],
            dims.b_view,
            &mut out[co..co + dims.m * dims.n],
            MatView::row_major(dims.m, dims.n),
            false,
        );
    }
    Tensor::new(dims.out_shape, out)
}

fn rope_dims(shape: &[usize], positions: &[f64], freqs: &[f64]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape("rope_rotate needs [.., T, d]"));
    }
    let (t, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if d % 2 != 0 || freqs.len() != d / 2 || positions.len() != t {
        return Err(Error::shape(format!(
            "rope_rotate: shape {shape:?}, {} positions, {} freqs",
            positions.len(),
            freqs.len()
        )));
    }
    Ok((t, d))
}

/// Rotates pairs `(x[i], x[i + d/2])` by `sign * position * freq[i]`.
pub(crate) fn rope_apply(data: &mut [f64], t: usize, d: usize, positions: &[f64], freqs: &[f64], sign: f64) {
    let half = d / 2;
    let table: Vec<(f64, f64)> = positions
        .iter()
        .flat_map(|&p| freqs.iter().map(move |&f| (sign * p * f).sin_cos()))
        .collect();
    for (r, row) in data.chunks_mut(d).enumerate() {
        let tr = r % t;
        for i in 0..half {
            let (s, c) = table[tr * half + i];
            let (a, b) = (row[i], row[i + half]);
            row[i] = a * c - b * s;
            row[i + half] = a * s + b * c;
        }
    }
}

/// `d R / d w_c` for each axis-angle component, as row-major 3×3 blocks.
fn rodrigues_jacobian(w: [f64; 3]) -> [[f64; 9]; 3] {
    let (a, b, da, db) = kernels::rodrigues_coeffs(w);
    let k = kernels::skew(w);
    let k2 = kernels::mat3_mul(&k, &k);
    let mut out = [[0.0; 9]; 3];
    for c in 0..3 {
        let mut e = [0.0; 3];
        e[c] = 1.0;
        let dk = kernels::skew(e);
        let dk_k = kernels::mat3_mul(&dk, &k);
        let k_dk = kernels::mat3_mul(&k, &dk);
        for i in 0..9 {
            out[c][i] = da * w[c] * k[i] + a * dk[i] + db * w[c] * k2[i] + b * (dk_k[i] + k_dk[i]);
        }
    }
    out
}
