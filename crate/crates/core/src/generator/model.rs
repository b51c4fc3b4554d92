use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::WindowLayout;
use crate::autodiff::{Bound, Graph, Op, ParamId, ParamStore, Tensor, Var};
use crate::codec::quant::{code_magnitude, resize_time};
use crate::codec::MultiScaleCode;
use crate::error::{Error, Result};
use crate::nn::{mask_leaf, rope_freqs, Attention, FeedForward, LayerNorm, Linear, Rotary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub window: usize,
    pub scales: Vec<usize>,
    pub code_dim: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub k_ctx: usize,
    pub flip_prob: f64,
    pub cond_drop_prob: f64,
    pub temperature: f64,
    pub seed: u64,
    pub audio_dim: usize,
    pub text_dim: usize,
    pub text_seed: u64,
    /// Audio lookback before the window start, in seconds.
    pub lookback_s: f64,
    pub fps: f64,
    pub rope_base: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            window: 100,
            scales: vec![1, 5, 25, 50, 100],
            code_dim: 32,
            d_model: 64,
            layers: 2,
            heads: 4,
            ffn_hidden: 128,
            k_ctx: 25,
            flip_prob: 0.1,
            cond_drop_prob: 0.1,
            temperature: 0.0,
            seed: 0,
            audio_dim: 16,
            text_dim: 32,
            text_seed: 0x7e47,
            lookback_s: 0.5,
            fps: 25.0,
            rope_base: 1000.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scales.is_empty() || self.scales.windows(2).any(|w| w[0] >= w[1]) || self.scales[0] == 0 {
            return bad(format!("scale lengths must be positive and strictly increasing: {:?}", self.scales));
        }
        if *self.scales.last().unwrap() != self.window {
            return bad("last scale must equal the window".into());
        }
        if !(0.0..1.0).contains(&self.flip_prob) || !(0.0..1.0).contains(&self.cond_drop_prob) {
            return bad("flip_prob and cond_drop_prob must lie in [0, 1)".into());
        }
        if !(self.temperature >= 0.0) || self.k_ctx == 0 || self.code_dim < 2 {
            return bad("temperature must be >= 0, k_ctx >= 1 and code_dim >= 2".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 || (self.d_model / self.heads) % 2 != 0 {
            return bad(format!("d_model {} must split into {} even-width heads", self.d_model, self.heads));
        }
        Ok(())
    }

    pub fn layout(&self) -> WindowLayout {
        WindowLayout::new(self.window, &self.scales, self.k_ctx)
    }

    pub fn lookback_frames(&self) -> f64 {
        self.lookback_s * self.fps
    }

    /// Scales, code width and window must match the codec's.
    pub fn check_codec(&self, scales: &[usize], code_dim: usize, window: usize) -> Result<()> {
        if scales != self.scales.as_slice() || code_dim != self.code_dim || window != self.window {
            return Err(Error::Config(format!(
                "generator (scales {:?}, {} bits, window {}) does not match codec (scales {scales:?}, {code_dim} bits, window {window})",
                self.scales, self.code_dim, self.window
            )));
        }
        Ok(())
    }
}

/// Conditioning for one window. `None` selects the learned null embedding.
#[derive(Clone, Copy, Debug)]
pub struct WindowInputs<'a> {
    /// Summed `[W, D_c]` code of the previous window.
    pub context: Option<&'a Tensor>,
    /// Known blocks `C_1..C_n` (teacher-forced or generated so far).
    pub scales: &'a [Tensor],
    /// Audio rows and their times relative to the window start (frame units).
    pub audio: &'a Tensor,
    pub audio_times: &'a [f64],
    pub style: Option<&'a Tensor>,
    pub emotion: Option<&'a Tensor>,
}

#[derive(Clone, Debug)]
struct GenLayer {
    ln_self: LayerNorm,
    self_attn: Attention,
    ln_audio: LayerNorm,
    audio_attn: Attention,
    ln_text: LayerNorm,
    text_attn: Attention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

/// Next-scale autoregressive transformer over one window of code tokens.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    layout: WindowLayout,
    freqs: Vec<f64>,
    params: ParamStore,
    start: ParamId,
    null_ctx: ParamId,
    ctx_in: Linear,
    scale_in: Linear,
    scale_emb: ParamId,
    audio_in: Linear,
    audio_ln: LayerNorm,
    text_in: Linear,
    kind_emb: ParamId,
    null_text: ParamId,
    layers: Vec<GenLayer>,
    out_ln: LayerNorm,
    out: Linear,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let rng = &mut rng;
        let mut ps = ParamStore::new();
        let d = config.d_model;
        let dc = config.code_dim;
        let start = ps.add_normal("start", &[1, d], 0.5, rng);
        let null_ctx = ps.add_normal("null_ctx", &[config.k_ctx, d], 0.5, rng);
        let ctx_in = Linear::new(&mut ps, "ctx_in", dc, d, true, rng);
        let scale_in = Linear::new(&mut ps, "scale_in", dc, d, true, rng);
        let scale_emb = ps.add_normal("scale_emb", &[config.scales.len(), d], 0.5, rng);
        let audio_in = Linear::new(&mut ps, "audio_in", config.audio_dim, d, true, rng);
        let audio_ln = LayerNorm::new(&mut ps, "audio_ln", d);
        let text_in = Linear::new(&mut ps, "text_in", config.text_dim, d, true, rng);
        let kind_emb = ps.add_normal("kind_emb", &[2, d], 0.5, rng);
        let null_text = ps.add_normal("null_text", &[2, d], 0.5, rng);
        let layers = (0..config.layers)
            .map(|i| {
                let n = |s: &str| format!("layer{i}.{s}");
                GenLayer {
                    ln_self: LayerNorm::new(&mut ps, &n("ln_self"), d),
                    self_attn: Attention::new(&mut ps, &n("self"), d, d, config.heads, rng),
                    ln_audio: LayerNorm::new(&mut ps, &n("ln_audio"), d),
                    audio_attn: Attention::new(&mut ps, &n("audio"), d, d, config.heads, rng),
                    ln_text: LayerNorm::new(&mut ps, &n("ln_text"), d),
                    text_attn: Attention::new(&mut ps, &n("text"), d, d, config.heads, rng),
                    ln_ffn: LayerNorm::new(&mut ps, &n("ln_ffn"), d),
                    ffn: FeedForward::new(&mut ps, &n("ffn"), d, config.ffn_hidden, rng),
                }
            })
            .collect();
        let out_ln = LayerNorm::new(&mut ps, "out_ln", d);
        let out = Linear::new(&mut ps, "out", d, dc, true, rng);
        ps.round_to_f32();
        Ok(Generator {
            layout: config.layout(),
            freqs: rope_freqs(d / config.heads, config.rope_base, 1.0),
            config,
            params: ps,
            start,
            null_ctx,
            ctx_in,
            scale_in,
            scale_emb,
            audio_in,
            audio_ln,
            text_in,
            kind_emb,
            null_text,
            layers,
            out_ln,
            out,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layout(&self) -> &WindowLayout {
        &self.layout
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    /// Input rows for scale block `scale` (0-based): the start embedding for the
    /// first block, otherwise the projected resized sum of earlier blocks plus the
    /// block's scale embedding.
    pub fn embed_scale_inputs(&self, g: &mut Graph, p: &Bound, prev: &[Tensor], scale: usize) -> Result<Var> {
        if scale == 0 {
            return Ok(p.get(self.start));
        }
        if prev.len() < scale {
            return Err(Error::State(format!(
                "block {} needs {scale} earlier scales, only {} available",
                scale + 1,
                prev.len()
            )));
        }
        let w = self.config.window;
        let mut sum = Tensor::zeros(&[w, self.config.code_dim]);
        for b in &prev[..scale] {
            let up = resize_time(b, w)?;
            sum.data_mut().iter_mut().zip(up.data()).for_each(|(s, u)| *s += u);
        }
        let x = g.leaf(resize_time(&sum, self.config.scales[scale])?);
        let h = self.scale_in.forward(g, p, x)?;
        let e = g.slice(p.get(self.scale_emb), 0, scale, scale + 1)?;
        g.add(h, e)
    }

    fn context_rows(&self, g: &mut Graph, p: &Bound, context: Option<&Tensor>) -> Result<Var> {
        match context {
            None => Ok(p.get(self.null_ctx)),
            Some(c) => {
                if c.shape() != [self.config.window, self.config.code_dim] {
                    return Err(Error::shape(format!("context code {:?}", c.shape())));
                }
                let x = g.leaf(resize_time(c, self.config.k_ctx)?);
                self.ctx_in.forward(g, p, x)
            }
        }
    }

    /// Projected audio keys/values `[T_a, d]`.
    pub fn audio_memory(&self, g: &mut Graph, p: &Bound, audio: &Tensor) -> Result<Var> {
        if audio.rank() != 2 || audio.rows() == 0 {
            return Err(Error::State("audio cross-attention needs at least one feature row".into()));
        }
        if audio.cols() != self.config.audio_dim {
            return Err(Error::Config(format!(
                "audio features have {} dims, generator expects {}",
                audio.cols(),
                self.config.audio_dim
            )));
        }
        let a = g.leaf(audio.clone());
        let a = self.audio_in.forward(g, p, a)?;
        self.audio_ln.forward(g, p, a)
    }

    /// Text keys/values: style tokens then emotion tokens, each tagged with its kind embedding.
    pub fn text_memory(&self, g: &mut Graph, p: &Bound, style: Option<&Tensor>, emotion: Option<&Tensor>) -> Result<Var> {
        let mut parts = Vec::with_capacity(2);
        for (kind, tokens) in [style, emotion].into_iter().enumerate() {
            let part = match tokens {
                None => g.slice(p.get(self.null_text), 0, kind, kind + 1)?,
                Some(t) => {
                    if t.rank() != 2 || t.cols() != self.config.text_dim || t.rows() == 0 {
                        return Err(Error::Config(format!(
                            "caption embedding {:?} does not match text width {}",
                            t.shape(),
                            self.config.text_dim
                        )));
                    }
                    let x = g.leaf(t.clone());
                    let h = self.text_in.forward(g, p, x)?;
                    let k = g.slice(p.get(self.kind_emb), 0, kind, kind + 1)?;
                    g.add(h, k)?
                }
            };
            parts.push(part);
        }
        g.concat(&parts, 0)
    }

    /// Token inputs `[len, d]` for the whole layout. Blocks beyond the first
    /// missing scale are zero-filled; the mask keeps them invisible to earlier blocks.
    pub fn token_inputs(&self, g: &mut Graph, p: &Bound, inputs: &WindowInputs) -> Result<Var> {
        let mut rows = vec![p.get(self.start), self.context_rows(g, p, inputs.context)?];
        for (i, &l) in self.config.scales.iter().enumerate() {
            if i <= inputs.scales.len() {
                rows.push(self.embed_scale_inputs(g, p, inputs.scales, i)?);
            } else {
                rows.push(g.leaf(Tensor::zeros(&[l, self.config.d_model])));
            }
        }
        g.concat(&rows, 0)
    }

    /// Per-bit logits `[Σ L_i, D_c]` for every scale block.
    pub fn forward_window(&self, g: &mut Graph, p: &Bound, inputs: &WindowInputs) -> Result<Var> {
        if inputs.audio_times.len() != inputs.audio.rows() {
            return Err(Error::shape("audio rows and timestamps differ in length"));
        }
        let layout = &self.layout;
        let n = layout.len();
        let mut h = self.token_inputs(g, p, inputs)?;
        let mask = mask_leaf(g, &layout.block_causal_mask(), n, n)?;
        let audio = self.audio_memory(g, p, inputs.audio)?;
        let text = self.text_memory(g, p, inputs.style, inputs.emotion)?;
        let tok_rot = Rotary {
            times: layout.times(),
            freqs: &self.freqs,
        };
        let audio_rot = Rotary {
            times: inputs.audio_times,
            freqs: &self.freqs,
        };
        for l in &self.layers {
            let x = l.ln_self.forward(g, p, h)?;
            let a = l.self_attn.forward(g, p, x, x, Some(&tok_rot), Some(&tok_rot), Some(mask))?;
            h = g.add(h, a)?;
            let x = l.ln_audio.forward(g, p, h)?;
            let a = l.audio_attn.forward(g, p, x, audio, Some(&tok_rot), Some(&audio_rot), None)?;
            h = g.add(h, a)?;
            let x = l.ln_text.forward(g, p, h)?;
            let a = l.text_attn.forward(g, p, x, text, Some(&tok_rot), None, None)?;
            h = g.add(h, a)?;
            let x = l.ln_ffn.forward(g, p, h)?;
            let f = l.ffn.forward(g, p, x)?;
            h = g.add(h, f)?;
        }
        let codes = g.slice(h, 0, layout.prefix_len(), n)?;
        let codes = self.out_ln.forward(g, p, codes)?;
        let logits = self.out.forward(g, p, codes)?;
        if !g.value(logits).is_finite() {
            return Err(Error::Numeric("generator logits are not finite".into()));
        }
        Ok(logits)
    }

    /// Audio cross-attention logits of the first layer for a given token input,
    /// exposed for alignment checks.
    pub fn audio_attention_logits(
        &self,
        g: &mut Graph,
        p: &Bound,
        tokens: Var,
        token_times: &[f64],
        audio: &Tensor,
        audio_times: &[f64],
    ) -> Result<Var> {
        let l = &self.layers[0];
        let memory = self.audio_memory(g, p, audio)?;
        let x = l.ln_audio.forward(g, p, tokens)?;
        l.audio_attn.logits(
            g,
            p,
            x,
            memory,
            Some(&Rotary {
                times: token_times,
                freqs: &self.freqs,
            }),
            Some(&Rotary {
                times: audio_times,
                freqs: &self.freqs,
            }),
        )
    }

    /// Output of the first layer's text cross-attention for given token rows.
    pub fn text_attention(
        &self,
        g: &mut Graph,
        p: &Bound,
        tokens: Var,
        token_times: &[f64],
        style: Option<&Tensor>,
        emotion: Option<&Tensor>,
    ) -> Result<Var> {
        let l = &self.layers[0];
        let memory = self.text_memory(g, p, style, emotion)?;
        let x = l.ln_text.forward(g, p, tokens)?;
        l.text_attn.forward(
            g,
            p,
            x,
            memory,
            Some(&Rotary {
                times: token_times,
                freqs: &self.freqs,
            }),
            None,
            None,
        )
    }
}

/// Sign targets `{0, 1}` for every code token, `[Σ L_i, D_c]`.
pub fn code_targets(code: &MultiScaleCode) -> Tensor {
    let d = code.code_dim;
    let rows: usize = code.scale_lengths().iter().sum();
    let data = (0..code.num_scales())
        .flat_map(|i| code.bits(i).iter().map(|&b| if b { 1.0 } else { 0.0 }))
        .collect();
    Tensor::new(vec![rows, d], data).expect("target rows")
}

/// Mean per-bit binary cross-entropy between logits and the code's signs.
pub fn ar_loss(g: &mut Graph, logits: Var, target: &MultiScaleCode) -> Result<Var> {
    let t = code_targets(target);
    if g.shape(logits) != t.shape() {
        return Err(Error::shape(format!("logits {:?} vs targets {:?}", g.shape(logits), t.shape())));
    }
    let t = g.leaf(t);
    let l = g.apply(Op::BceWithLogits, &[logits, t])?;
    g.mean(l)
}

/// Fraction of bits whose logit sign matches the target (`logit ≥ 0` ↔ `+`).
pub fn bit_accuracy(logits: &Tensor, target: &MultiScaleCode) -> f64 {
    let t = code_targets(target);
    let hits = logits
        .data()
        .iter()
        .zip(t.data())
        .filter(|(&z, &y)| (z >= 0.0) == (y == 1.0))
        .count();
    hits as f64 / t.numel() as f64
}

/// Flips each bit independently with probability `p`.
pub fn flip_bits(block: &Tensor, p: f64, rng: &mut impl Rng) -> Tensor {
    if p == 0.0 {
        return block.clone();
    }
    let mut out = block.clone();
    for v in out.data_mut() {
        if rng.gen_bool(p) {
            *v = -*v;
        }
    }
    out
}

/// Per-bit sampling: `temperature == 0` thresholds at logit 0, otherwise
/// `P(+) = sigmoid(logit / temperature)`.
pub fn sample_bits(logits: &[f64], temperature: f64, code_dim: usize, rng: &mut impl Rng) -> Tensor {
    let mag = code_magnitude(code_dim);
    let data = logits
        .iter()
        .map(|&z| {
            let plus = if temperature == 0.0 {
                z >= 0.0
            } else {
                rng.gen::<f64>() < crate::autodiff::kernels::sigmoid(z / temperature)
            };
            if plus {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(vec![logits.len() / code_dim, code_dim], data).expect("block rows")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Generator {
        Generator::new(GeneratorConfig {
            window: 10,
            scales: vec![1, 5, 10],
            code_dim: 4,
            d_model: 16,
            layers: 2,
            heads: 2,
            ffn_hidden: 24,
            k_ctx: 3,
            audio_dim: 5,
            text_dim: 6,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    fn signs(rows: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = code_magnitude(d);
        let data = (0..rows * d).map(|_| if rng.gen_bool(0.5) { m } else { -m }).collect();
        Tensor::new(vec![rows, d], data).unwrap()
    }

    fn audio(rows: usize) -> (Tensor, Vec<f64>) {
        let data = (0..rows * 5).map(|i| (i as f64 * 0.7).sin()).collect();
        (Tensor::new(vec![rows, 5], data).unwrap(), (0..rows).map(|j| j as f64 * 0.5 - 2.0).collect())
    }

    #[test]
    fn scale_inputs() {
        let gen = tiny();
        let mut g = Graph::new();
        let p = gen.params().bind(&mut g);
        let s = gen.embed_scale_inputs(&mut g, &p, &[], 0).unwrap();
        assert_eq!(g.value(s), gen.params().get(gen.start));
        assert!(matches!(gen.embed_scale_inputs(&mut g, &p, &[], 1), Err(Error::State(_))));
        let c1 = Tensor::new(vec![1, 4], vec![0.5, -0.5, 0.5, 0.5]).unwrap();
        let x = gen.embed_scale_inputs(&mut g, &p, &[c1], 1).unwrap();
        let v = g.value(x);
        assert_eq!(v.shape(), &[5, 16]);
        for r in 1..5 {
            assert_eq!(v.row(r), v.row(0));
        }
    }

    #[test]
    fn null_conditioning_gives_finite_logits_of_the_right_shape() {
        let gen = tiny();
        let (a, t) = audio(4);
        let mut g = Graph::new();
        let p = gen.params().bind(&mut g);
        let win = WindowInputs {
            context: None,
            scales: &[],
            audio: &a,
            audio_times: &t,
            style: None,
            emotion: None,
        };
        let z = gen.forward_window(&mut g, &p, &win).unwrap();
        assert_eq!(g.shape(z), &[16, 4]);
        assert!(g.value(z).is_finite());
    }

    #[test]
    fn later_blocks_do_not_leak_backwards() {
        let gen = tiny();
        let (a, t) = audio(6);
        let ctx = signs(10, 4, 9);
        let run = |c2: Tensor| {
            let blocks = [signs(1, 4, 1), c2];
            let mut g = Graph::new();
            let p = gen.params().bind(&mut g);
            let win = WindowInputs {
                context: Some(&ctx),
                scales: &blocks,
                audio: &a,
                audio_times: &t,
                style: None,
                emotion: None,
            };
            let z = gen.forward_window(&mut g, &p, &win).unwrap();
            g.value(z).clone()
        };
        let x = run(signs(5, 4, 2));
        let y = run(signs(5, 4, 3));
        let rows = 6 * 4;
        assert_eq!(&x.data()[..rows], &y.data()[..rows]);
        assert_ne!(&x.data()[rows..], &y.data()[rows..]);
    }

    #[test]
    fn audio_logits_depend_on_time_differences() {
        let gen = tiny();
        let (a, t) = audio(5);
        let tok_times = [0.5, 3.0, 7.25];
        let run = |shift: f64| {
            let mut g = Graph::new();
            let p = gen.params().bind(&mut g);
            let x = g.leaf(signs(3, 16, 4));
            let qt: Vec<f64> = tok_times.iter().map(|v| v + shift).collect();
            let kt: Vec<f64> = t.iter().map(|v| v + shift).collect();
            let l = gen.audio_attention_logits(&mut g, &p, x, &qt, &a, &kt).unwrap();
            g.value(l).clone()
        };
        let base = run(0.0);
        for shift in [1.0, -13.5, 250.0] {
            let moved = run(shift);
            for (u, v) in base.data().iter().zip(moved.data()) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn text_attention_is_position_free() {
        let gen = tiny();
        let style = Tensor::from_rows(&[vec![1.0, 0.0, 0.5, 0.0, 0.0, 0.2], vec![0.0, -1.0, 0.0, 0.3, 0.1, 0.0]]).unwrap();
        let swapped = Tensor::from_rows(&[style.row(1).to_vec(), style.row(0).to_vec()]).unwrap();
        let emo = Tensor::from_rows(&[vec![0.2; 6]]).unwrap();
        let run = |s: &Tensor| {
            let mut g = Graph::new();
            let p = gen.params().bind(&mut g);
            let x = g.leaf(signs(4, 16, 5));
            let o = gen.text_attention(&mut g, &p, x, &[0.0, 1.0, 2.0, 3.0], Some(s), Some(&emo)).unwrap();
            g.value(o).clone()
        };
        let (u, v) = (run(&style), run(&swapped));
        for (a, b) in u.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let mut g = Graph::new();
        let p = gen.params().bind(&mut g);
        let m = gen.text_memory(&mut g, &p, Some(&style), Some(&emo)).unwrap();
        assert_eq!(g.shape(m), &[3, 16]);
    }

    #[test]
    fn loss_examples() {
        let code = MultiScaleCode::new(2, vec![vec![true, true]]).unwrap();
        let mut g = Graph::new();
        let z = g.leaf(Tensor::zeros(&[1, 2]));
        let l = ar_loss(&mut g, z, &code).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
        let z = g.leaf(Tensor::new(vec![1, 2], vec![0.0, 20.0]).unwrap());
        let l = ar_loss(&mut g, z, &code).unwrap();
        assert!((g.value(l).data()[0] - (std::f64::consts::LN_2 + (-20f64).exp().ln_1p()) / 2.0).abs() < 1e-12);
        let z = g.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(ar_loss(&mut g, z, &code), Err(Error::Shape(_))));
    }

    #[test]
    fn greedy_sampling_is_sign_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = [-0.3, 0.0, 2.0, -1e-9];
        let b = sample_bits(&z, 0.0, 2, &mut rng);
        let m = code_magnitude(2);
        assert_eq!(b.data(), &[-m, m, m, -m]);
    }

    #[test]
    fn config_validation() {
        let bad = GeneratorConfig {
            flip_prob: 1.0,
            ..GeneratorConfig::default()
        };
        assert!(matches!(Generator::new(bad), Err(Error::Config(_))));
        let c = GeneratorConfig::default();
        assert!(c.check_codec(&[1, 5, 25, 50, 100], 32, 100).is_ok());
        assert!(matches!(c.check_codec(&[1, 4, 25, 50, 100], 32, 100), Err(Error::Config(_))));
    }
}
