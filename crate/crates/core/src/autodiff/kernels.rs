//! Raw numeric kernels shared by the graph ops and the non-differentiable
//! code paths (quantizer, metrics, head model).

use crate::error::{Error, Result};

/// Strided view of a matrix: element (i, j) lives at `off + i * rs + j * cs`.
#[derive(Clone, Copy, Debug)]
pub struct MatView {
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl MatView {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        MatView {
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatView {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c (+)= a · b` over strided views.
pub fn gemm(a: &[f64], av: MatView, b: &[f64], bv: MatView, c: &mut [f64], cv: MatView, accumulate: bool) {
    debug_assert_eq!(av.cols, bv.rows);
    debug_assert_eq!(av.rows, cv.rows);
    debug_assert_eq!(bv.cols, cv.cols);
    let (m, k, n) = (av.rows, av.cols, bv.cols);
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                for j in 0..n {
                    c[(i as isize * cv.rs + j as isize * cv.cs) as usize] = 0.0;
                }
            }
        }
        return;
    }
    // Bounds: every view is checked against its slice before the raw call.
    let max_index = |v: MatView| -> usize {
        ((v.rows.saturating_sub(1)) as isize * v.rs + (v.cols.saturating_sub(1)) as isize * v.cs) as usize
    };
    assert!(max_index(av) < a.len() && max_index(bv) < b.len() && max_index(cv) < c.len());
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            av.rs,
            av.cs,
            b.as_ptr(),
            bv.rs,
            bv.cs,
            beta,
            c.as_mut_ptr(),
            cv.rs,
            cv.cs,
        );
    }
}

/// Interpolation taps for align-corners linear resizing from `src` to `dst`
/// samples: output `j` reads `x[i0] + frac * (x[i0 + 1] - x[i0])`.
///
/// A single-sample target reads the temporal midpoint of the source.
pub fn resize_taps(src: usize, dst: usize) -> Vec<(usize, f64)> {
    (0..dst)
        .map(|j| {
            if src == 1 {
                return (0, 0.0);
            }
            let (num, den) = if dst == 1 { (src - 1, 2) } else { (j * (src - 1), dst - 1) };
            let i0 = num / den;
            let rem = num % den;
            if rem == 0 {
                (i0, 0.0)
            } else {
                (i0, rem as f64 / den as f64)
            }
        })
        .collect()
}

/// Resizes a `[src, channels]` row-major block along its first axis.
pub fn resize_rows(x: &[f64], src: usize, channels: usize, dst: usize) -> Vec<f64> {
    let mut out = vec![0.0; dst * channels];
    for (j, &(i0, frac)) in resize_taps(src, dst).iter().enumerate() {
        let row0 = &x[i0 * channels..(i0 + 1) * channels];
        let o = &mut out[j * channels..(j + 1) * channels];
        if frac == 0.0 {
            o.copy_from_slice(row0);
        } else {
            let row1 = &x[(i0 + 1) * channels..(i0 + 2) * channels];
            for c in 0..channels {
                o[c] = row0[c] + frac * (row1[c] - row0[c]);
            }
        }
    }
    out
}

/// Adjoint of [`resize_rows`]: scatters output gradients back onto the source rows.
pub fn resize_rows_adjoint(g: &[f64], src: usize, channels: usize, dst: usize, gx: &mut [f64]) {
    for (j, &(i0, frac)) in resize_taps(src, dst).iter().enumerate() {
        let gj = &g[j * channels..(j + 1) * channels];
        if frac == 0.0 {
            for c in 0..channels {
                gx[i0 * channels + c] += gj[c];
            }
        } else {
            for c in 0..channels {
                gx[i0 * channels + c] += (1.0 - frac) * gj[c];
                gx[(i0 + 1) * channels + c] += frac * gj[c];
            }
        }
    }
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes (right-aligned).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// Strides of `shape` when viewed inside the broadcast `out` shape (0 on broadcast axes).
pub fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visits every output element of a broadcast binary op with the flat input offsets.
pub fn for_each_broadcast(
    out_shape: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let numel: usize = out_shape.iter().product();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut ao, mut bo) = (0usize, 0usize);
    for o in 0..numel {
        f(o, ao, bo);
        // odometer increment
        let mut d = rank - 1;
        loop {
            idx[d] += 1;
            ao += a_strides[d];
            bo += b_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            ao -= a_strides[d] * out_shape[d];
            bo -= b_strides[d] * out_shape[d];
            idx[d] = 0;
            if d == 0 {
                break;
            }
            d -= 1;
        }
    }
}

/// Permutes the axes of a row-major array.
pub fn permute(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![0.0; data.len()];
    for_each_broadcast(&out_shape, &src_strides, &src_strides, |o, s, _| out[o] = data[s]);
    (out, out_shape)
}

pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rodrigues rotation matrix (row-major 3×3) for an axis-angle vector.
pub fn axis_angle_matrix(w: [f64; 3]) -> [f64; 9] {
    let (a, b, _, _) = rodrigues_coeffs(w);
    let k = skew(w);
    let k2 = mat3_mul(&k, &k);
    let mut r = [0.0; 9];
    for i in 0..9 {
        r[i] = a * k[i] + b * k2[i];
    }
    r[0] += 1.0;
    r[4] += 1.0;
    r[8] += 1.0;
    r
}

/// `(A, B, A'/θ, B'/θ)` for `R = I + A K + B K²`, with Taylor branches near zero.
pub(crate) fn rodrigues_coeffs(w: [f64; 3]) -> (f64, f64, f64, f64) {
    let t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    if t2 < 1e-6 {
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
        )
    } else {
        let t = t2.sqrt();
        let (s, c) = t.sin_cos();
        (
            s / t,
            (1.0 - c) / t2,
            (t * c - s) / (t2 * t),
            (t * s - 2.0 * (1.0 - c)) / (t2 * t2),
        )
    }
}

pub(crate) fn skew(w: [f64; 3]) -> [f64; 9] {
    [0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0]
}

pub(crate) fn mat3_mul(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut c = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            c[i * 3 + j] = (0..3).map(|p| a[i * 3 + p] * b[p * 3 + j]).sum();
        }
    }
    c
}

/// Population standard deviation (N in the denominator; 0 for one sample).
pub fn popstd(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}
