//! Transformer building blocks on top of the autodiff graph.

use rand::Rng;

use crate::autodiff::{Bound, Graph, Op, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;
/// Additive logit for disallowed attention pairs.
pub const MASKED: f64 = -1e9;

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let w = ps.add_normal(format!("{name}.w"), &[d_in, d_out], 1.0 / (d_in as f64).sqrt(), rng);
        let b = bias.then(|| ps.add_const(format!("{name}.b"), &[d_out], 0.0));
        Linear { w, b }
    }

    /// `[.., d_in] → [.., d_out]` for rank-2 or rank-3 inputs.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.get(self.w))?;
        match self.b {
            Some(b) => g.add(y, p.get(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: ps.add_const(format!("{name}.gamma"), &[d], 1.0),
            beta: ps.add_const(format!("{name}.beta"), &[d], 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, LN_EPS)?;
        let n = g.mul(n, p.get(self.gamma))?;
        g.add(n, p.get(self.beta))
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            up: Linear::new(ps, &format!("{name}.up"), d, hidden, true, rng),
            down: Linear::new(ps, &format!("{name}.down"), hidden, d, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        let h = g.gelu(h)?;
        self.down.forward(g, p, h)
    }
}

/// Rotary angles applied to one side of an attention product: per-row times
/// and the per-pair frequency bank.
#[derive(Clone, Debug)]
pub struct Rotary<'a> {
    pub times: &'a [f64],
    pub freqs: &'a [f64],
}

/// Geometric frequency bank `base^(-2i/d_head)` for `i < d_head/2`, scaled by `scale`.
pub fn rope_freqs(d_head: usize, base: f64, scale: f64) -> Vec<f64> {
    (0..d_head / 2)
        .map(|i| scale * base.powf(-2.0 * i as f64 / d_head as f64))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub heads: usize,
    pub d: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, d_kv: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(d % heads == 0 && (d / heads) % 2 == 0, "head width must be even");
        Attention {
            heads,
            d,
            q: Linear::new(ps, &format!("{name}.q"), d, d, true, rng),
            k: Linear::new(ps, &format!("{name}.k"), d_kv, d, true, rng),
            v: Linear::new(ps, &format!("{name}.v"), d_kv, d, true, rng),
            o: Linear::new(ps, &format!("{name}.o"), d, d, true, rng),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    fn split_heads(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let t = g.shape(x)[0];
        let x = g.reshape(x, vec![t, self.heads, self.head_dim()])?;
        g.transpose(x, Some(vec![1, 0, 2]))
    }

    /// Scaled attention logits `[heads, Tq, Tk]` before masking.
    pub fn logits(
        &self,
        g: &mut Graph,
        p: &Bound,
        query: Var,
        kv: Var,
        q_rot: Option<&Rotary>,
        k_rot: Option<&Rotary>,
    ) -> Result<Var> {
        let q = self.q.forward(g, p, query)?;
        let q = self.split_heads(g, q)?;
        let q = rotate(g, q, q_rot)?;
        let k = self.k.forward(g, p, kv)?;
        let k = self.split_heads(g, k)?;
        let k = rotate(g, k, k_rot)?;
        let s = g.matmul_t(q, k, false, true)?;
        g.scale(s, 1.0 / (self.head_dim() as f64).sqrt())
    }

    /// `query [Tq, d]` attends over `kv [Tk, d_kv]`; `mask` is an additive `[Tq, Tk]` leaf.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        query: Var,
        kv: Var,
        q_rot: Option<&Rotary>,
        k_rot: Option<&Rotary>,
        mask: Option<Var>,
    ) -> Result<Var> {
        let tq = g.shape(query)[0];
        let mut s = self.logits(g, p, query, kv, q_rot, k_rot)?;
        if let Some(m) = mask {
            s = g.add(s, m)?;
        }
        let a = g.softmax(s)?;
        let v = self.v.forward(g, p, kv)?;
        let v = self.split_heads(g, v)?;
        let o = g.matmul(a, v)?;
        let o = g.transpose(o, Some(vec![1, 0, 2]))?;
        let o = g.reshape(o, vec![tq, self.d])?;
        self.o.forward(g, p, o)
    }
}

fn rotate(g: &mut Graph, x: Var, rot: Option<&Rotary>) -> Result<Var> {
    match rot {
        Some(r) => {
            let t = g.shape(x)[1];
            if r.times.len() != t {
                return Err(Error::shape(format!("{} rotary times for {t} rows", r.times.len())));
            }
            g.apply(
                Op::RopeRotate {
                    positions: r.times.to_vec(),
                    freqs: r.freqs.to_vec(),
                },
                &[x],
            )
        }
        None => Ok(x),
    }
}

/// Pre-norm bidirectional transformer block used by the codec.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

impl EncoderBlock {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        EncoderBlock {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d),
            attn: Attention::new(ps, &format!("{name}.attn"), d, d, heads, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), d, hidden, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, p, x)?;
        let a = self.attn.forward(g, p, h, h, None, None, None)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, p, x)?;
        let f = self.ffn.forward(g, p, h)?;
        g.add(x, f)
    }
}

/// Additive mask leaf from a boolean allow-matrix.
pub fn mask_leaf(g: &mut Graph, allow: &[bool], tq: usize, tk: usize) -> Result<Var> {
    let data = allow.iter().map(|&a| if a { 0.0 } else { MASKED }).collect();
    Ok(g.leaf(Tensor::new(vec![tq, tk], data)?))
}
