use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::quant::{self, code_magnitude, MultiScaleCode};
use crate::autodiff::{Bound, Graph, Op, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::head::{HeadModel, MotionSequence};
use crate::nn::{EncoderBlock, LayerNorm, Linear};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub window: usize,
    pub scales: Vec<usize>,
    pub code_dim: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub w_full: f64,
    pub w_lips: f64,
    pub beta_commit: f64,
    pub eps_norm: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            window: 100,
            scales: vec![1, 5, 25, 50, 100],
            code_dim: 32,
            d_model: 64,
            layers: 2,
            heads: 4,
            ffn_hidden: 128,
            w_full: 1.0,
            w_lips: 2.0,
            beta_commit: 0.25,
            eps_norm: 1e-6,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scales.is_empty() || self.scales.windows(2).any(|w| w[0] >= w[1]) || self.scales[0] == 0 {
            return bad(format!("scale lengths must be positive and strictly increasing: {:?}", self.scales));
        }
        if *self.scales.last().unwrap() != self.window {
            return bad(format!("last scale {} must equal the window {}", self.scales.last().unwrap(), self.window));
        }
        if self.code_dim < 2 {
            return bad(format!("code dimension must be >= 2, got {}", self.code_dim));
        }
        if [self.w_full, self.w_lips, self.beta_commit].iter().any(|w| !(*w >= 0.0)) || !(self.eps_norm > 0.0) {
            return bad("loss weights must be non-negative and eps_norm positive".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 || (self.d_model / self.heads) % 2 != 0 {
            return bad(format!("d_model {} must split into {} even-width heads", self.d_model, self.heads));
        }
        Ok(())
    }
}

/// Per-channel affine normalization applied to motion features before encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(width: usize) -> Self {
        NormStats {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Statistics over every frame of every sample; near-constant channels keep unit scale.
    pub fn from_samples(samples: &[CodecSample]) -> Self {
        let width = samples[0].motion.cols();
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let mut n = 0usize;
        for s in samples {
            for row in s.motion.data().chunks(width) {
                for c in 0..width {
                    sum[c] += row[c];
                }
                n += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for s in samples {
            for row in s.motion.data().chunks(width) {
                for c in 0..width {
                    sq[c] += (row[c] - mean[c]).powi(2);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let v = (s / n as f64).sqrt();
                if v > 1e-6 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        NormStats { mean, std }
    }
}

/// One training window with its precomputed target vertices.
#[derive(Clone, Debug)]
pub struct CodecSample {
    /// `[W, K_ψ + K_θ]` raw motion features.
    pub motion: Tensor,
    pub beta: Vec<f64>,
    /// `[W, V, 3]` decoded target vertices.
    pub vertices: Tensor,
}

impl CodecSample {
    pub fn new(head: &HeadModel, window: &MotionSequence) -> Result<Self> {
        head.check_motion(window)?;
        let motion = window.window_tensor(0, window.frames())?;
        // same arithmetic as the loss path so a perfect reconstruction scores exactly zero
        let mut g = Graph::new();
        let x = g.leaf(motion.clone());
        let v = head.decode_graph(&mut g, x, &window.beta)?;
        Ok(CodecSample {
            motion,
            beta: window.beta.clone(),
            vertices: g.value(v).clone(),
        })
    }
}

/// How the quantizer produces its forward value inside a training graph.
#[derive(Clone, Debug)]
pub enum QuantMode {
    /// Signs recomputed from the current latent; gradients pass straight through to `u`.
    Live,
    /// Forward value `q₀ + u − u₀` with recorded constants, i.e. the smooth surrogate whose
    /// exact derivative equals the straight-through gradient at the recording point.
    Frozen(Vec<FrozenScale>),
}

#[derive(Clone, Debug)]
pub struct FrozenScale {
    pub q: Tensor,
    pub u: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l1: Var,
    pub full_vertex: Var,
    pub lip_vertex: Var,
    pub vq: Var,
    pub total: Var,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub l1: f64,
    pub full_vertex: f64,
    pub lip_vertex: f64,
    pub vq: f64,
}

impl LossValues {
    pub fn read(g: &Graph, v: &LossVars) -> Self {
        let s = |x: Var| g.value(x).data()[0];
        LossValues {
            total: s(v.total),
            l1: s(v.l1),
            full_vertex: s(v.full_vertex),
            lip_vertex: s(v.lip_vertex),
            vq: s(v.vq),
        }
    }

    pub fn add_scaled(&mut self, o: &LossValues, k: f64) {
        self.total += k * o.total;
        self.l1 += k * o.l1;
        self.full_vertex += k * o.full_vertex;
        self.lip_vertex += k * o.lip_vertex;
        self.vq += k * o.vq;
    }
}

pub struct ForwardOutput {
    pub recon: Var,
    pub latent: Var,
    pub losses: LossVars,
    pub code: MultiScaleCode,
    pub frozen: Vec<FrozenScale>,
}

/// Motion reconstruction losses: `l1`, weighted full-vertex and lip-vertex MSE.
pub fn motion_losses(
    g: &mut Graph,
    head: &HeadModel,
    cfg: &CodecConfig,
    recon: Var,
    target: &Tensor,
    target_vertices: &Tensor,
    beta: &[f64],
) -> Result<(Var, Var, Var)> {
    let t = g.leaf(target.clone());
    let diff = g.sub(recon, t)?;
    let ad = g.abs(diff)?;
    let l1 = g.mean(ad)?;
    let verts = head.decode_graph(g, recon, beta)?;
    let tv = g.leaf(target_vertices.clone());
    let vd = g.sub(verts, tv)?;
    let sq = g.mul(vd, vd)?;
    let full = g.mean(sq)?;
    let full = g.scale(full, cfg.w_full)?;
    let n = target.rows();
    let per_vertex = g.transpose(sq, Some(vec![1, 0, 2]))?;
    let per_vertex = g.reshape(per_vertex, vec![head.vertex_count, n * 3])?;
    let lips = g.apply(
        Op::GatherRows {
            indices: head.lip_indices.clone(),
        },
        &[per_vertex],
    )?;
    let lips = g.mean(lips)?;
    let lips = g.scale(lips, cfg.w_lips)?;
    Ok((l1, full, lips))
}

#[derive(Clone, Debug)]
struct Stack {
    input: Linear,
    pos: ParamId,
    blocks: Vec<EncoderBlock>,
    ln: LayerNorm,
    output: Linear,
}

impl Stack {
    fn new(ps: &mut ParamStore, name: &str, cfg: &CodecConfig, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        Stack {
            input: Linear::new(ps, &format!("{name}.in"), d_in, d, true, rng),
            pos: ps.add_normal(format!("{name}.pos"), &[cfg.window, d], 0.1, rng),
            blocks: (0..cfg.layers)
                .map(|i| EncoderBlock::new(ps, &format!("{name}.block{i}"), d, cfg.heads, cfg.ffn_hidden, rng))
                .collect(),
            ln: LayerNorm::new(ps, &format!("{name}.ln"), d),
            output: Linear::new(ps, &format!("{name}.out"), d, d_out, true, rng),
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.input.forward(g, p, x)?;
        let mut h = g.add(h, p.get(self.pos))?;
        for b in &self.blocks {
            h = b.forward(g, p, h)?;
        }
        let h = self.ln.forward(g, p, h)?;
        self.output.forward(g, p, h)
    }
}

/// Transformer autoencoder with a multi-scale binary bottleneck.
#[derive(Clone, Debug)]
pub struct CodecModel {
    pub config: CodecConfig,
    pub seed: u64,
    pub stats: NormStats,
    pub head: HeadModel,
    params: ParamStore,
    encoder: Stack,
    decoder: Stack,
}

impl CodecModel {
    pub fn new(config: CodecConfig, head: HeadModel, stats: NormStats, seed: u64) -> Result<Self> {
        config.validate()?;
        let width = head.motion_dim();
        if stats.mean.len() != width || stats.std.len() != width {
            return Err(Error::config(format!(
                "normalization stats cover {} channels, head model has {width}",
                stats.mean.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let encoder = Stack::new(&mut ps, "enc", &config, width, config.code_dim, &mut rng);
        let decoder = Stack::new(&mut ps, "dec", &config, config.code_dim, width, &mut rng);
        ps.round_to_f32();
        Ok(CodecModel {
            config,
            seed,
            stats,
            head,
            params: ps,
            encoder,
            decoder,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn width(&self) -> usize {
        self.head.motion_dim()
    }

    fn check_window(&self, motion: &Tensor) -> Result<()> {
        if motion.shape() != [self.config.window, self.width()] {
            return Err(Error::shape(format!(
                "codec window must be [{}, {}], got {:?}",
                self.config.window,
                self.width(),
                motion.shape()
            )));
        }
        Ok(())
    }

    /// Latent `[W, D_c]` from raw motion features.
    pub fn encode_graph(&self, g: &mut Graph, p: &Bound, motion: Var) -> Result<Var> {
        let mean = g.leaf(Tensor::new(vec![self.width()], self.stats.mean.clone())?);
        let inv: Vec<f64> = self.stats.std.iter().map(|s| 1.0 / s).collect();
        let inv = g.leaf(Tensor::new(vec![self.width()], inv)?);
        let x = g.sub(motion, mean)?;
        let x = g.mul(x, inv)?;
        self.encoder.forward(g, p, x)
    }

    /// Raw motion features from a `[W, D_c]` (summed) code latent.
    pub fn decode_graph(&self, g: &mut Graph, p: &Bound, latent: Var) -> Result<Var> {
        let y = self.decoder.forward(g, p, latent)?;
        let std = g.leaf(Tensor::new(vec![self.width()], self.stats.std.clone())?);
        let mean = g.leaf(Tensor::new(vec![self.width()], self.stats.mean.clone())?);
        let y = g.mul(y, std)?;
        g.add(y, mean)
    }

    /// Differentiable residual quantization; returns the summed upsampled codes and the commitment loss.
    pub fn quantize_graph(&self, g: &mut Graph, latent: Var, mode: &QuantMode) -> Result<(Var, Var, MultiScaleCode, Vec<FrozenScale>)> {
        let cfg = &self.config;
        let d = cfg.code_dim;
        let mag = code_magnitude(d);
        if let QuantMode::Frozen(f) = mode {
            if f.len() != cfg.scales.len() {
                return Err(Error::shape("frozen quantizer scale count mismatch"));
            }
        }
        let mut residual = latent;
        let mut summed: Option<Var> = None;
        let mut commit: Option<Var> = None;
        let mut blocks = Vec::with_capacity(cfg.scales.len());
        let mut frozen = Vec::with_capacity(cfg.scales.len());
        let mut count = 0usize;
        for (i, &l) in cfg.scales.iter().enumerate() {
            let r = g.resize_time(residual, l)?;
            let n = g.apply(Op::L2Norm, &[r])?;
            let n = g.apply(Op::ClampMin(cfg.eps_norm), &[n])?;
            let u = g.div(r, n)?;
            let uval = g.value(u).clone();
            let qval = Tensor::new(
                vec![l, d],
                uval.data().iter().map(|&v| if v >= 0.0 { mag } else { -mag }).collect(),
            )?;
            let (q, target) = match mode {
                QuantMode::Live => {
                    let qc = g.leaf(qval.clone());
                    (g.pass_through(qc, u)?, qc)
                }
                QuantMode::Frozen(f) => {
                    let off: Vec<f64> = f[i].q.data().iter().zip(f[i].u.data()).map(|(q, u)| q - u).collect();
                    let off = g.leaf(Tensor::new(vec![l, d], off)?);
                    let target = g.leaf(f[i].q.clone());
                    (g.add(u, off)?, target)
                }
            };
            let diff = g.sub(u, target)?;
            let sq = g.mul(diff, diff)?;
            let s = g.sum(sq)?;
            commit = Some(match commit {
                Some(c) => g.add(c, s)?,
                None => s,
            });
            count += l * d;
            let up = g.resize_time(q, cfg.window)?;
            residual = g.sub(residual, up)?;
            summed = Some(match summed {
                Some(acc) => g.add(acc, up)?,
                None => up,
            });
            blocks.push(qval.clone());
            frozen.push(FrozenScale { q: qval, u: uval });
        }
        let vq = g.scale(commit.expect("at least one scale"), cfg.beta_commit / count as f64)?;
        let code = match mode {
            QuantMode::Live => MultiScaleCode::from_values(&blocks)?,
            QuantMode::Frozen(f) => MultiScaleCode::from_values(&f.iter().map(|s| s.q.clone()).collect::<Vec<_>>())?,
        };
        Ok((summed.expect("at least one scale"), vq, code, frozen))
    }

    /// Full training forward: encode, quantize, decode and all loss terms.
    pub fn forward_losses(&self, g: &mut Graph, p: &Bound, sample: &CodecSample, mode: &QuantMode) -> Result<ForwardOutput> {
        self.check_window(&sample.motion)?;
        let x = g.leaf(sample.motion.clone());
        self.forward_losses_from(g, p, x, sample, mode)
    }

    /// As [`CodecModel::forward_losses`] with the input motion supplied as a graph node.
    pub fn forward_losses_from(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        sample: &CodecSample,
        mode: &QuantMode,
    ) -> Result<ForwardOutput> {
        let latent = self.encode_graph(g, p, x)?;
        let (summed, vq, code, frozen) = self.quantize_graph(g, latent, mode)?;
        let recon = self.decode_graph(g, p, summed)?;
        let (l1, full_vertex, lip_vertex) =
            motion_losses(g, &self.head, &self.config, recon, &sample.motion, &sample.vertices, &sample.beta)?;
        let total = g.add(l1, full_vertex)?;
        let total = g.add(total, lip_vertex)?;
        let total = g.add(total, vq)?;
        if !g.value(total).is_finite() {
            return Err(Error::Numeric("codec loss is not finite".into()));
        }
        Ok(ForwardOutput {
            recon,
            latent,
            losses: LossVars {
                l1,
                full_vertex,
                lip_vertex,
                vq,
                total,
            },
            code,
            frozen,
        })
    }

    /// Pre-quantization latent for one raw `[W, F]` window.
    pub fn latent(&self, motion: &Tensor) -> Result<Tensor> {
        self.check_window(motion)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let x = g.leaf(motion.clone());
        let l = self.encode_graph(&mut g, &p, x)?;
        Ok(g.value(l).clone())
    }

    pub fn encode(&self, motion: &Tensor) -> Result<MultiScaleCode> {
        let latent = self.latent(motion)?;
        Ok(quant::quantize_multiscale(&latent, &self.config.scales, self.config.eps_norm)?.code)
    }

    /// Raw motion features decoded from a `[W, D_c]` latent.
    pub fn decode_latent(&self, latent: &Tensor) -> Result<Tensor> {
        if latent.shape() != [self.config.window, self.config.code_dim] {
            return Err(Error::shape(format!("decoder latent {:?}", latent.shape())));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let l = g.leaf(latent.clone());
        let y = self.decode_graph(&mut g, &p, l)?;
        Ok(g.value(y).clone())
    }

    pub fn decode(&self, code: &MultiScaleCode) -> Result<Tensor> {
        self.check_code(code)?;
        self.decode_latent(&quant::dequantize_multiscale(code, self.config.window)?)
    }

    pub fn check_code(&self, code: &MultiScaleCode) -> Result<()> {
        if code.code_dim != self.config.code_dim || code.scale_lengths() != self.config.scales {
            return Err(Error::config(format!(
                "code ({} bits, scales {:?}) does not match codec ({} bits, scales {:?})",
                code.code_dim,
                code.scale_lengths(),
                self.config.code_dim,
                self.config.scales
            )));
        }
        Ok(())
    }

    /// Encode, quantize and decode one window.
    pub fn reconstruct(&self, motion: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(motion)?)
    }

    /// Loss terms for one sample without building gradients.
    pub fn evaluate(&self, sample: &CodecSample) -> Result<LossValues> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let out = self.forward_losses(&mut g, &p, sample, &QuantMode::Live)?;
        Ok(LossValues::read(&g, &out.losses))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::make_toy_head_model;

    fn small_cfg() -> CodecConfig {
        CodecConfig {
            window: 10,
            scales: vec![1, 5, 10],
            code_dim: 8,
            d_model: 16,
            layers: 1,
            heads: 2,
            ffn_hidden: 32,
            ..CodecConfig::default()
        }
    }

    #[test]
    fn zero_error_gives_zero_motion_losses() {
        let head = make_toy_head_model(1, 10, 2, 4, 1).unwrap();
        let m = MotionSequence::new(25.0, 4, 4, vec![0.1, 0.2], (0..24).map(|i| 0.01 * i as f64).collect()).unwrap();
        let s = CodecSample::new(&head, &m).unwrap();
        let mut g = Graph::new();
        let r = g.leaf(s.motion.clone());
        let (l1, f, lp) = motion_losses(&mut g, &head, &small_cfg(), r, &s.motion, &s.vertices, &s.beta).unwrap();
        for v in [l1, f, lp] {
            assert_eq!(g.value(v).data()[0], 0.0);
        }
    }

    #[test]
    fn one_frame_l1_is_mean_reduced() {
        let head = make_toy_head_model(1, 10, 2, 10, 3).unwrap();
        let mut feats = vec![0.0; 16];
        feats[0] = 1.0;
        let m = MotionSequence::new(25.0, 10, 6, vec![0.0, 0.0], feats).unwrap();
        let s = CodecSample::new(&head, &m).unwrap();
        let mut g = Graph::new();
        let r = g.leaf(Tensor::zeros(&[1, 16]));
        let (l1, _, _) = motion_losses(&mut g, &head, &small_cfg(), r, &s.motion, &s.vertices, &s.beta).unwrap();
        assert!((g.value(l1).data()[0] - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn zero_vertex_weights_reduce_total_to_l1_plus_vq() {
        let head = make_toy_head_model(1, 10, 2, 4, 1).unwrap();
        let cfg = CodecConfig {
            w_full: 0.0,
            w_lips: 0.0,
            ..small_cfg()
        };
        let m = MotionSequence::new(25.0, 4, 4, vec![0.0; 2], (0..80).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let s = CodecSample::new(&head, &m).unwrap();
        let model = CodecModel::new(cfg, head, NormStats::from_samples(&[s.clone()]), 3).unwrap();
        let l = model.evaluate(&s).unwrap();
        assert!((l.total - (l.l1 + l.vq)).abs() < 1e-15);
        assert_eq!(l.full_vertex, 0.0);
    }

    #[test]
    fn graph_and_plain_quantization_agree() {
        let head = make_toy_head_model(2, 10, 2, 4, 1).unwrap();
        let m = MotionSequence::new(25.0, 4, 4, vec![0.0; 2], (0..80).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
        let s = CodecSample::new(&head, &m).unwrap();
        let model = CodecModel::new(small_cfg(), head, NormStats::from_samples(&[s.clone()]), 3).unwrap();
        let mut g = Graph::new();
        let p = model.params().bind(&mut g);
        let out = model.forward_losses(&mut g, &p, &s, &QuantMode::Live).unwrap();
        assert_eq!(out.code, model.encode(&s.motion).unwrap());
        let recon = g.value(out.recon).clone();
        let plain = model.reconstruct(&s.motion).unwrap();
        for (a, b) in recon.data().iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
