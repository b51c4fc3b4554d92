use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ar_loss, bit_accuracy, flip_bits, Generator, GeneratorConfig, WindowInputs};
use crate::autodiff::{AdamW, AdamWConfig, Graph, Tensor};
use crate::codec::{dequantize_multiscale, CodecModel, MultiScaleCode};
use crate::conditioning::{CaptionKind, TextEncoder};
use crate::error::{Error, Result};
use crate::head::{read_json, write_json};
use crate::synth::WindowItem;
use crate::train::{batch_gradients, thread_pool, BatchSampler, Schedule};

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS_DIR: &str = "params";

/// One teacher-forcing example: a window's code and its conditioning.
#[derive(Clone, Debug, PartialEq)]
pub struct ArSample {
    pub code: MultiScaleCode,
    /// Summed code of the preceding window of the same clip.
    pub context: Option<Tensor>,
    pub audio: Tensor,
    pub audio_times: Vec<f64>,
    pub style: Tensor,
    pub emotion: Tensor,
}

impl ArSample {
    pub fn inputs<'a>(&'a self, scales: &'a [Tensor]) -> WindowInputs<'a> {
        WindowInputs {
            context: self.context.as_ref(),
            scales,
            audio: &self.audio,
            audio_times: &self.audio_times,
            style: Some(&self.style),
            emotion: Some(&self.emotion),
        }
    }
}

pub fn text_encoder(config: &GeneratorConfig) -> TextEncoder {
    TextEncoder::new(config.text_seed, config.text_dim)
}

/// Encodes every window with the frozen codec and attaches audio, captions
/// and previous-window context.
pub fn build_ar_samples(items: &[WindowItem], codec: &CodecModel, config: &GeneratorConfig) -> Result<Vec<ArSample>> {
    let c = &codec.config;
    config.check_codec(&c.scales, c.code_dim, c.window)?;
    let w = config.window;
    let text = text_encoder(config);
    let codes = items
        .iter()
        .map(|it| codec.encode(&it.motion.window_tensor(0, w)?))
        .collect::<Result<Vec<_>>>()?;
    let index: HashMap<(usize, usize), usize> = items.iter().enumerate().map(|(i, it)| ((it.clip, it.start_frame), i)).collect();
    items
        .iter()
        .zip(&codes)
        .map(|(it, code)| {
            let context = match it.start_frame.checked_sub(w).and_then(|s| index.get(&(it.clip, s))) {
                Some(&j) => Some(dequantize_multiscale(&codes[j], w)?),
                None => None,
            };
            let s = it.start_frame as f64;
            let (audio, audio_times) = it
                .audio
                .span(s - config.lookback_frames(), s + w as f64, s)
                .ok_or_else(|| Error::State(format!("no audio features for window at frame {}", it.start_frame)))?;
            Ok(ArSample {
                code: code.clone(),
                context,
                audio,
                audio_times,
                style: text.encode(&it.style_caption, CaptionKind::Style).tokens,
                emotion: text.encode(&it.emotion_caption, CaptionKind::Emotion).tokens,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArTrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub schedule: Schedule,
    pub adam: AdamWConfig,
    pub seed: u64,
}

impl Default for ArTrainConfig {
    fn default() -> Self {
        ArTrainConfig {
            iters: 3000,
            batch: 4,
            schedule: Schedule {
                lr: 1e-3,
                warmup: 100,
                final_frac: 0.05,
            },
            adam: AdamWConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArLogRow {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    pub bit_accuracy: f64,
}

pub fn ar_log_csv(rows: &[ArLogRow]) -> String {
    let mut s = String::from("iter,lr,loss,bit_accuracy\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{:.9},{:.6}", r.iter, r.lr, r.loss, r.bit_accuracy);
    }
    s
}

/// Perturbed teacher-forced loss for one sample: input bits flipped with
/// `flip_prob`, context and each caption independently dropped with `cond_drop_prob`.
pub fn perturbed_loss(
    gen: &Generator,
    g: &mut Graph,
    p: &crate::autodiff::Bound,
    sample: &ArSample,
    rng: &mut ChaCha8Rng,
) -> Result<(crate::autodiff::Var, f64)> {
    let cfg = &gen.config;
    let n = cfg.scales.len();
    let inputs: Vec<Tensor> = (0..n - 1).map(|i| flip_bits(&sample.code.block(i), cfg.flip_prob, rng)).collect();
    let mut drop = || cfg.cond_drop_prob > 0.0 && rng.gen_bool(cfg.cond_drop_prob);
    let (d_ctx, d_style, d_emo) = (drop(), drop(), drop());
    let mut win = sample.inputs(&inputs);
    if d_ctx {
        win.context = None;
    }
    if d_style {
        win.style = None;
    }
    if d_emo {
        win.emotion = None;
    }
    let logits = gen.forward_window(g, p, &win)?;
    let acc = bit_accuracy(g.value(logits), &sample.code);
    Ok((ar_loss(g, logits, &sample.code)?, acc))
}

/// AdamW on the per-bit cross-entropy with teacher forcing.
pub fn train_ar(
    samples: &[ArSample],
    config: GeneratorConfig,
    tc: &ArTrainConfig,
    mut on_step: impl FnMut(&ArLogRow),
) -> Result<(Generator, Vec<ArLogRow>)> {
    if samples.is_empty() {
        return Err(Error::Config("generator training set is empty".into()));
    }
    if tc.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    for s in samples {
        if s.code.scale_lengths() != config.scales || s.code.code_dim != config.code_dim {
            return Err(Error::Config(format!(
                "training code (scales {:?}, {} bits) does not match generator (scales {:?}, {} bits)",
                s.code.scale_lengths(),
                s.code.code_dim,
                config.scales,
                config.code_dim
            )));
        }
    }
    let mut gen = Generator::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(0x51_7cc1_b727_220a));
    let mut sampler = BatchSampler::new(samples.len());
    let mut opt = AdamW::new(tc.adam, gen.params().values());
    let pool = thread_pool()?;
    let mut log = Vec::with_capacity(tc.iters);
    for iter in 0..tc.iters {
        let jobs: Vec<(usize, u64)> = sampler
            .next_batch(tc.batch, &mut rng)
            .into_iter()
            .enumerate()
            .map(|(j, i)| (i, (iter * tc.batch + j) as u64))
            .collect();
        let (grads, outs) = batch_gradients(&pool, gen.params(), &jobs, |&(i, stream), g, p| {
            let mut r = ChaCha8Rng::seed_from_u64(tc.seed);
            r.set_stream(stream);
            let (loss, acc) = perturbed_loss(&gen, g, p, &samples[i], &mut r)?;
            Ok((loss, (g.value(loss).data()[0], acc)))
        })?;
        let k = 1.0 / outs.len() as f64;
        opt.config.lr = tc.schedule.lr_at(iter, tc.iters);
        opt.step(gen.params_mut().values_mut(), &grads)?;
        let row = ArLogRow {
            iter,
            lr: opt.config.lr,
            loss: outs.iter().map(|o| o.0).sum::<f64>() * k,
            bit_accuracy: outs.iter().map(|o| o.1).sum::<f64>() * k,
        };
        on_step(&row);
        log.push(row);
    }
    gen.params_mut().round_to_f32();
    Ok((gen, log))
}

/// Unperturbed teacher-forced bit accuracy averaged over `samples`.
pub fn teacher_forced_accuracy(gen: &Generator, samples: &[ArSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let mut g = Graph::new();
        let p = gen.params().bind(&mut g);
        let blocks = s.code.blocks();
        let logits = gen.forward_window(&mut g, &p, &s.inputs(&blocks[..blocks.len() - 1]))?;
        total += bit_accuracy(g.value(logits), &s.code);
    }
    Ok(total / samples.len().max(1) as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArManifest {
    kind: String,
    version: u32,
    scales: Vec<usize>,
    #[serde(rename = "D_c")]
    code_dim: usize,
    d: usize,
    layers: usize,
    heads: usize,
    #[serde(rename = "K_ctx")]
    k_ctx: usize,
    seed: u64,
    config: GeneratorConfig,
    params: Vec<String>,
}

impl Generator {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let c = &self.config;
        let manifest = ArManifest {
            kind: "ar".into(),
            version: 1,
            scales: c.scales.clone(),
            code_dim: c.code_dim,
            d: c.d_model,
            layers: c.layers,
            heads: c.heads,
            k_ctx: c.k_ctx,
            seed: c.seed,
            config: c.clone(),
            params: self.params().names().to_vec(),
        };
        write_json(&dir.join(MANIFEST), &manifest)?;
        self.params().save_dir(&dir.join(PARAMS_DIR))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: ArManifest = read_json(&dir.join(MANIFEST))?;
        if m.kind != "ar" {
            return Err(Error::Config(format!("{} is a {} checkpoint, not a generator", dir.display(), m.kind)));
        }
        let c = &m.config;
        if m.scales != c.scales || m.code_dim != c.code_dim || m.d != c.d_model || m.k_ctx != c.k_ctx {
            return Err(Error::format(format!("{}: manifest header disagrees with its config", dir.display())));
        }
        let mut gen = Generator::new(m.config)?;
        if gen.params().names() != m.params.as_slice() {
            return Err(Error::Config("generator checkpoint parameter list does not match the configuration".into()));
        }
        gen.params_mut().load_dir(&dir.join(PARAMS_DIR))?;
        Ok(gen)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> GeneratorConfig {
        GeneratorConfig {
            window: 10,
            scales: vec![1, 5, 10],
            code_dim: 4,
            d_model: 8,
            layers: 1,
            heads: 2,
            ffn_hidden: 16,
            k_ctx: 2,
            audio_dim: 3,
            text_dim: 4,
            ..GeneratorConfig::default()
        }
    }

    fn samples() -> Vec<ArSample> {
        let text = text_encoder(&config());
        (0..3)
            .map(|k| {
                let blocks = [1usize, 5, 10]
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| (0..l * 4).map(|j| (j * 7 + i * 3 + k) % 3 == 0).collect())
                    .collect();
                let rows = 24;
                ArSample {
                    code: MultiScaleCode::new(4, blocks).unwrap(),
                    context: (k > 0).then(|| Tensor::full(&[10, 4], 0.5)),
                    audio: Tensor::new(vec![rows, 3], (0..rows * 3).map(|i| ((i + k) as f64).sin()).collect()).unwrap(),
                    audio_times: (0..rows).map(|j| j as f64 * 0.5 - 2.0).collect(),
                    style: text.encode("small mouth", CaptionKind::Style).tokens,
                    emotion: text.encode("sad", CaptionKind::Emotion).tokens,
                }
            })
            .collect()
    }

    #[test]
    fn zero_iterations_is_initialization() {
        let tc = ArTrainConfig {
            iters: 0,
            ..ArTrainConfig::default()
        };
        let (gen, log) = train_ar(&samples(), config(), &tc, |_| {}).unwrap();
        assert!(log.is_empty());
        assert_eq!(gen.params(), Generator::new(config()).unwrap().params());
    }

    #[test]
    fn unperturbed_training_is_deterministic_and_learns() {
        let cfg = GeneratorConfig {
            flip_prob: 0.0,
            cond_drop_prob: 0.0,
            ..config()
        };
        let tc = ArTrainConfig {
            iters: 60,
            batch: 2,
            schedule: Schedule::constant(1e-2),
            ..ArTrainConfig::default()
        };
        let (a, la) = train_ar(&samples(), cfg.clone(), &tc, |_| {}).unwrap();
        let (b, lb) = train_ar(&samples(), cfg, &tc, |_| {}).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.params(), b.params());
        assert!(la.last().unwrap().loss < la[0].loss);
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        assert_eq!(Generator::load(dir.path()).unwrap().params(), a.params());
        assert!(ar_log_csv(&la).starts_with("iter,lr,loss,bit_accuracy\n"));
    }

    #[test]
    fn mismatched_codes_are_config_errors() {
        let cfg = GeneratorConfig {
            window: 10,
            scales: vec![2, 5, 10],
            ..config()
        };
        let err = train_ar(&samples(), cfg, &ArTrainConfig::default(), |_| {}).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
