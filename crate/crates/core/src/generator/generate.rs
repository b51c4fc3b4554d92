use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{sample_bits, Generator, WindowInputs};
use super::train::text_encoder;
use crate::autodiff::{Graph, Tensor};
use crate::codec::{dequantize_values, CodecModel, MultiScaleCode};
use crate::conditioning::{AudioFeatures, CaptionKind, CaptionTimeline};
use crate::error::{Error, Result};
use crate::head::MotionSequence;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingOptions {
    pub temperature: f64,
    pub seed: u64,
    /// Feature value used to pad the trailing partial window.
    pub silence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedWindow {
    pub start_frame: usize,
    pub style: String,
    pub emotion: String,
    pub code: MultiScaleCode,
}

/// Samples the code of one window scale by scale.
pub fn generate_window(
    gen: &Generator,
    inputs: &WindowInputs,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MultiScaleCode> {
    let cfg = &gen.config;
    let mut blocks: Vec<Tensor> = Vec::with_capacity(cfg.scales.len());
    for i in 0..cfg.scales.len() {
        let mut g = Graph::new();
        let p = gen.params().bind(&mut g);
        let win = WindowInputs {
            scales: &blocks,
            ..*inputs
        };
        let logits = gen.forward_window(&mut g, &p, &win)?;
        let rows = gen.layout().logit_rows(i);
        let d = cfg.code_dim;
        let z = &g.value(logits).data()[rows.start * d..rows.end * d];
        blocks.push(sample_bits(z, temperature, d, rng));
    }
    MultiScaleCode::from_values(&blocks)
}

/// Generates codes for every window covering `audio`. Window `k` draws from its
/// own stream of the seeded generator, so its bits depend only on earlier
/// windows and its own conditioning.
pub fn generate_codes(
    gen: &Generator,
    audio: &AudioFeatures,
    timeline: &CaptionTimeline,
    opts: &SamplingOptions,
) -> Result<(usize, Vec<GeneratedWindow>)> {
    let cfg = &gen.config;
    if !(opts.temperature >= 0.0 && opts.temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be finite and >= 0, got {}", opts.temperature)));
    }
    let frames = audio.frames();
    if frames == 0 {
        return Err(Error::State("audio covers less than one frame".into()));
    }
    let w = cfg.window;
    let n_windows = frames.div_ceil(w);
    let audio = audio.padded_to_frames(n_windows * w, opts.silence)?;
    let text = text_encoder(cfg);
    let mut out: Vec<GeneratedWindow> = Vec::with_capacity(n_windows);
    let mut context: Option<Tensor> = None;
    for k in 0..n_windows {
        let start = k * w;
        let caps = timeline.captions_for_window(start);
        let style = text.encode(&caps.style, CaptionKind::Style).tokens;
        let emotion = text.encode(&caps.emotion, CaptionKind::Emotion).tokens;
        let s = start as f64;
        let (feats, times) = audio
            .span(s - cfg.lookback_frames(), s + w as f64, s)
            .ok_or_else(|| Error::State(format!("no audio features for window {k}")))?;
        let inputs = WindowInputs {
            context: context.as_ref(),
            scales: &[],
            audio: &feats,
            audio_times: &times,
            style: Some(&style),
            emotion: Some(&emotion),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(k as u64);
        let code = generate_window(gen, &inputs, opts.temperature, &mut rng)?;
        context = Some(dequantize_values(&code.blocks(), w)?);
        log::info!("window {k} (frames {start}..{}): style {:?}, emotion {:?}", start + w, caps.style, caps.emotion);
        out.push(GeneratedWindow {
            start_frame: start,
            style: caps.style.clone(),
            emotion: caps.emotion.clone(),
            code,
        });
    }
    Ok((frames, out))
}

/// Full pipeline: sample codes per window, decode with the codec and trim the padding.
pub fn generate(
    gen: &Generator,
    codec: &CodecModel,
    audio: &AudioFeatures,
    timeline: &CaptionTimeline,
    opts: &SamplingOptions,
) -> Result<(MotionSequence, Vec<GeneratedWindow>)> {
    let c = &codec.config;
    gen.config.check_codec(&c.scales, c.code_dim, c.window)?;
    if audio.fps != gen.config.fps {
        return Err(Error::Config(format!("audio is aligned to {} fps, generator to {}", audio.fps, gen.config.fps)));
    }
    let (frames, windows) = generate_codes(gen, audio, timeline, opts)?;
    let width = codec.width();
    let mut data = Vec::with_capacity(windows.len() * c.window * width);
    for w in &windows {
        data.extend_from_slice(codec.decode(&w.code)?.data());
    }
    data.truncate(frames * width);
    let head = &codec.head;
    let motion = MotionSequence::new(gen.config.fps, head.k_psi, head.k_theta(), vec![0.0; head.k_beta], data)?;
    Ok((motion, windows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{CodecConfig, NormStats};
    use crate::generator::GeneratorConfig;
    use crate::head::make_toy_head_model;

    fn models() -> (Generator, CodecModel) {
        let head = make_toy_head_model(3, 10, 2, 3, 1).unwrap();
        let codec_cfg = CodecConfig {
            window: 10,
            scales: vec![1, 5, 10],
            code_dim: 4,
            d_model: 8,
            layers: 1,
            heads: 2,
            ffn_hidden: 16,
            ..CodecConfig::default()
        };
        let codec = CodecModel::new(codec_cfg, head, NormStats::identity(7), 1).unwrap();
        let gen = Generator::new(GeneratorConfig {
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
        })
        .unwrap();
        (gen, codec)
    }

    fn features(frames: usize) -> AudioFeatures {
        let rows = frames * 2;
        let data = (0..rows * 3).map(|i| (i as f64 * 0.31).cos()).collect();
        AudioFeatures::new(Tensor::new(vec![rows, 3], data).unwrap(), 50.0, 25.0).unwrap()
    }

    fn opts(seed: u64, temperature: f64) -> SamplingOptions {
        SamplingOptions {
            temperature,
            seed,
            silence: 0.0,
        }
    }

    #[test]
    fn window_count_and_truncation() {
        let (gen, codec) = models();
        let tl = CaptionTimeline::constant("small mouth", "neutral");
        let (m, w) = generate(&gen, &codec, &features(20), &tl, &opts(0, 0.0)).unwrap();
        assert_eq!((m.frames(), w.len()), (20, 2));
        let (m, w) = generate(&gen, &codec, &features(13), &tl, &opts(0, 0.0)).unwrap();
        assert_eq!((m.frames(), w.len()), (13, 2));
        let (m, w) = generate(&gen, &codec, &features(10), &tl, &opts(0, 0.0)).unwrap();
        assert_eq!((m.frames(), w.len()), (10, 1));
    }

    #[test]
    fn seeded_sampling_is_reproducible_and_windows_are_causal() {
        let (gen, _) = models();
        let tl = CaptionTimeline::constant("large mouth", "happy");
        let a = generate_codes(&gen, &features(30), &tl, &opts(4, 1.0)).unwrap();
        let b = generate_codes(&gen, &features(30), &tl, &opts(4, 1.0)).unwrap();
        assert_eq!(a, b);
        let short = generate_codes(&gen, &features(10), &tl, &opts(4, 1.0)).unwrap();
        assert_eq!(short.1[0], a.1[0]);
        let two = generate_codes(&gen, &features(20), &tl, &opts(4, 1.0)).unwrap();
        assert_eq!(two.1[..2], a.1[..2]);
    }

    #[test]
    fn timeline_switches_per_window() {
        let (gen, _) = models();
        let tl = CaptionTimeline::new(vec![
            crate::conditioning::TimelineEntry {
                start_frame: 0,
                style: "a".into(),
                emotion: "x".into(),
            },
            crate::conditioning::TimelineEntry {
                start_frame: 10,
                style: "b".into(),
                emotion: "y".into(),
            },
        ])
        .unwrap();
        let (_, w) = generate_codes(&gen, &features(20), &tl, &opts(0, 0.0)).unwrap();
        assert_eq!((w[0].style.as_str(), w[1].style.as_str()), ("a", "b"));
    }

    #[test]
    fn incompatible_inputs() {
        let (gen, codec) = models();
        let tl = CaptionTimeline::constant("", "");
        let empty = AudioFeatures::new(Tensor::zeros(&[1, 3]), 50.0, 25.0).unwrap();
        assert!(matches!(generate_codes(&gen, &empty, &tl, &opts(0, 0.0)), Err(Error::State(_))));
        let wide = AudioFeatures::new(Tensor::zeros(&[20, 7]), 50.0, 25.0).unwrap();
        assert!(matches!(generate(&gen, &codec, &wide, &tl, &opts(0, 0.0)), Err(Error::Config(_))));
        let other = Generator::new(GeneratorConfig {
            scales: vec![1, 2, 10],
            ..gen.config.clone()
        })
        .unwrap();
        assert!(matches!(generate(&other, &codec, &features(10), &tl, &opts(0, 0.0)), Err(Error::Config(_))));
    }
}
