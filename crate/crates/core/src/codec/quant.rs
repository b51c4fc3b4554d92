//! Binary spherical quantization, multi-scale residual coding and the `.ctcode` format.

use std::fs;
use std::path::Path;

use crate::autodiff::kernels;
use crate::autodiff::tensor::ByteCursor;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CODE_MAGIC: &[u8; 4] = b"CTC1";

/// Quantizes one latent row: `u = z / max(‖z‖, eps)`, `q = sign⁺(u) / √D`.
pub fn bsq_quantize(z: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: Vec<f64> = z.iter().map(|v| v / norm.max(eps)).collect();
    let mag = code_magnitude(z.len());
    let q = u.iter().map(|&v| if v >= 0.0 { mag } else { -mag }).collect();
    (q, u)
}

pub fn code_magnitude(d: usize) -> f64 {
    (1.0 / d as f64).sqrt()
}

/// Align-corners linear resize of a `[len, channels]` sequence along time.
pub fn resize_time(seq: &Tensor, target: usize) -> Result<Tensor> {
    if seq.rank() != 2 || target == 0 {
        return Err(Error::shape(format!("resize_time of {:?} to {target}", seq.shape())));
    }
    let (src, ch) = (seq.shape()[0], seq.shape()[1]);
    if src == target {
        return Ok(seq.clone());
    }
    Tensor::new(vec![target, ch], kernels::resize_rows(seq.data(), src, ch, target))
}

/// Sign blocks `C_1..C_lvl`; bit `true` stands for `+1/√D`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiScaleCode {
    pub code_dim: usize,
    blocks: Vec<Vec<bool>>,
}

impl MultiScaleCode {
    pub fn new(code_dim: usize, blocks: Vec<Vec<bool>>) -> Result<Self> {
        if code_dim < 2 {
            return Err(Error::format(format!("code dimension must be >= 2, got {code_dim}")));
        }
        if blocks.is_empty() || blocks.iter().any(|b| b.is_empty() || b.len() % code_dim != 0) {
            return Err(Error::format("code blocks must be non-empty multiples of the code dimension"));
        }
        Ok(MultiScaleCode { code_dim, blocks })
    }

    /// Builds a code from real-valued blocks, checking the `±1/√D` magnitude invariant.
    pub fn from_values(blocks: &[Tensor]) -> Result<Self> {
        let d = blocks.first().map(|b| b.cols()).unwrap_or(0);
        let mag = code_magnitude(d.max(1));
        let mut bits = Vec::with_capacity(blocks.len());
        for (i, b) in blocks.iter().enumerate() {
            if b.rank() != 2 || b.cols() != d {
                return Err(Error::format(format!("code block {i} has shape {:?}", b.shape())));
            }
            if b.data().iter().any(|v| (v.abs() - mag).abs() > 1e-9 * mag) {
                return Err(Error::format(format!("code block {i} has entries not equal to ±1/√{d}")));
            }
            bits.push(b.data().iter().map(|&v| v > 0.0).collect());
        }
        MultiScaleCode::new(d, bits)
    }

    pub fn num_scales(&self) -> usize {
        self.blocks.len()
    }

    pub fn scale_lengths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len() / self.code_dim).collect()
    }

    pub fn bits(&self, scale: usize) -> &[bool] {
        &self.blocks[scale]
    }

    /// Block `scale` as an `[L_i, D]` matrix of `±1/√D`.
    pub fn block(&self, scale: usize) -> Tensor {
        let mag = code_magnitude(self.code_dim);
        let b = &self.blocks[scale];
        Tensor::new(
            vec![b.len() / self.code_dim, self.code_dim],
            b.iter().map(|&s| if s { mag } else { -mag }).collect(),
        )
        .expect("block shape")
    }

    pub fn blocks(&self) -> Vec<Tensor> {
        (0..self.num_scales()).map(|i| self.block(i)).collect()
    }

    /// Bit-packed serialization (LSB first within each byte, padded per block).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CODE_MAGIC);
        out.extend_from_slice(&(self.code_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for l in self.scale_lengths() {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        for b in &self.blocks {
            for chunk in b.chunks(8) {
                out.push(chunk.iter().enumerate().fold(0u8, |acc, (i, &s)| acc | ((s as u8) << i)));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(4)? != CODE_MAGIC {
            return Err(Error::format("bad code file magic"));
        }
        let d = cur.u32()? as usize;
        let n = cur.u32()? as usize;
        if n == 0 || n > 1 << 16 {
            return Err(Error::format(format!("implausible scale count {n}")));
        }
        let lens = (0..n).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let mut blocks = Vec::with_capacity(n);
        for l in lens {
            let nbits = l.checked_mul(d).ok_or_else(|| Error::format("code block too large"))?;
            let packed = cur.take(nbits.div_ceil(8))?;
            blocks.push((0..nbits).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect());
        }
        if !cur.is_empty() {
            return Err(Error::format("trailing bytes after code blocks"));
        }
        MultiScaleCode::new(d, blocks)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Result of residual quantization: the code, the final residual and the
/// per-scale unit-sphere points `u`.
#[derive(Clone, Debug)]
pub struct Quantized {
    pub code: MultiScaleCode,
    pub residual: Tensor,
    pub units: Vec<Tensor>,
}

/// Residual multi-scale quantization of a `[W, D]` latent.
pub fn quantize_multiscale(latent: &Tensor, scales: &[usize], eps: f64) -> Result<Quantized> {
    let w = *scales.last().ok_or_else(|| Error::config("no scales"))?;
    if latent.rank() != 2 || latent.shape()[0] != w {
        return Err(Error::shape(format!("latent {:?} vs window {w}", latent.shape())));
    }
    let d = latent.cols();
    let mut residual = latent.clone();
    let mut blocks = Vec::with_capacity(scales.len());
    let mut units = Vec::with_capacity(scales.len());
    for &l in scales {
        let r = resize_time(&residual, l)?;
        let mut q = Vec::with_capacity(l * d);
        let mut u = Vec::with_capacity(l * d);
        for row in r.data().chunks(d) {
            let (qr, ur) = bsq_quantize(row, eps);
            q.extend(qr);
            u.extend(ur);
        }
        let q = Tensor::new(vec![l, d], q)?;
        let up = resize_time(&q, w)?;
        residual.data_mut().iter_mut().zip(up.data()).for_each(|(r, u)| *r -= u);
        blocks.push(q);
        units.push(Tensor::new(vec![l, d], u)?);
    }
    Ok(Quantized {
        code: MultiScaleCode::from_values(&blocks)?,
        residual,
        units,
    })
}

/// `Σ_i resize(C_i, W)` over real-valued blocks, validating their magnitudes.
pub fn dequantize_values(blocks: &[Tensor], window: usize) -> Result<Tensor> {
    let code = MultiScaleCode::from_values(blocks)?;
    dequantize_multiscale(&code, window)
}

pub fn dequantize_multiscale(code: &MultiScaleCode, window: usize) -> Result<Tensor> {
    let mut out = Tensor::zeros(&[window, code.code_dim]);
    for i in 0..code.num_scales() {
        let up = resize_time(&code.block(i), window)?;
        out.data_mut().iter_mut().zip(up.data()).for_each(|(o, u)| *o += u);
    }
    Ok(out)
}

/// Sum of the first `n` upsampled blocks, resized to `window` frames.
pub fn partial_sum(code: &MultiScaleCode, n: usize, window: usize) -> Result<Tensor> {
    let mut out = Tensor::zeros(&[window, code.code_dim]);
    for i in 0..n.min(code.num_scales()) {
        let up = resize_time(&code.block(i), window)?;
        out.data_mut().iter_mut().zip(up.data()).for_each(|(o, u)| *o += u);
    }
    Ok(out)
}
