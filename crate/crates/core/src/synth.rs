//! Deterministic "styled talking" clips: syllable-modulated tones with motion
//! whose mouth, head and emotion channels follow the requested style.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::popstd;
use crate::conditioning::{read_wav, write_wav, AudioEncoder, AudioFeatures, CaptionTimeline, FPS, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::head::{make_toy_head_model, read_json, write_json, HeadModel, MotionSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mouth {
    Small,
    Large,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMotion {
    Still,
    Lively,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Happy,
    Sad,
    Angry,
}

impl Emotion {
    pub const ALL: [Emotion; 4] = [Emotion::Neutral, Emotion::Happy, Emotion::Sad, Emotion::Angry];

    pub fn word(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Angry => "angry",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl Mouth {
    pub fn amplitude(self) -> f64 {
        match self {
            Mouth::Small => 0.5,
            Mouth::Large => 1.5,
        }
    }
}

impl HeadMotion {
    pub fn amplitude(self) -> f64 {
        match self {
            HeadMotion::Still => 0.05,
            HeadMotion::Lively => 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Style {
    pub mouth: Mouth,
    pub head: HeadMotion,
    pub emotion: Emotion,
}

impl Style {
    /// Grid cell `i mod 16`: mouth varies fastest, then head, then emotion.
    pub fn grid(i: usize) -> Self {
        let c = i % 16;
        Style {
            mouth: if c % 2 == 0 { Mouth::Small } else { Mouth::Large },
            head: if (c / 2) % 2 == 0 { HeadMotion::Still } else { HeadMotion::Lively },
            emotion: Emotion::ALL[c / 4],
        }
    }

    pub fn style_caption(&self) -> String {
        style_caption(self.mouth, self.head)
    }

    pub fn emotion_caption(&self) -> String {
        emotion_caption(self.emotion)
    }
}

pub fn style_caption(mouth: Mouth, head: HeadMotion) -> String {
    let m = match mouth {
        Mouth::Small => "slightly",
        Mouth::Large => "wide",
    };
    let h = match head {
        HeadMotion::Still => "keeps the head still",
        HeadMotion::Lively => "moves the head a lot",
    };
    format!("the speaker opens the mouth {m} and {h}")
}

pub fn emotion_caption(e: Emotion) -> String {
    format!("the voice sounds {}", e.word())
}

/// Inverse of the caption templates.
pub fn parse_captions(style: &str, emotion: &str) -> Option<Style> {
    let mouth = if style.contains(" wide ") {
        Mouth::Large
    } else if style.contains(" slightly ") {
        Mouth::Small
    } else {
        return None;
    };
    let head = if style.ends_with("a lot") {
        HeadMotion::Lively
    } else if style.ends_with("still") {
        HeadMotion::Still
    } else {
        return None;
    };
    let emotion = Emotion::ALL.into_iter().find(|e| emotion.ends_with(e.word()))?;
    Some(Style { mouth, head, emotion })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthDims {
    pub vertices: usize,
    pub k_beta: usize,
    pub k_psi: usize,
    pub k_pc: usize,
}

impl Default for SynthDims {
    fn default() -> Self {
        SynthDims {
            vertices: 50,
            k_beta: 8,
            k_psi: 10,
            k_pc: 3,
        }
    }
}

impl SynthDims {
    fn check(&self) -> Result<()> {
        if self.k_psi < 2 || self.k_pc < 3 {
            return Err(Error::Config("synthetic motion needs K_psi >= 2 and K_pc >= 3".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    pub mouth_amp: f64,
    pub head_amp: f64,
    pub emotion_offset: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub waveform: Vec<f64>,
    pub motion: MotionSequence,
    pub style: Style,
    pub style_caption: String,
    pub emotion_caption: String,
    pub style_params: StyleParams,
    /// Syllable envelope sampled at frame centers.
    pub envelope: Vec<f64>,
}

/// Sum of non-overlapping `sin²` syllable bumps.
#[derive(Clone, Debug)]
pub struct Envelope {
    syllables: Vec<(f64, f64, f64)>,
}

impl Envelope {
    pub fn random(seed: u64, duration: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = rng.gen_range(0.05..0.25);
        let mut syllables = Vec::new();
        loop {
            let dur = rng.gen_range(0.12..0.32);
            if t + dur > duration {
                break;
            }
            syllables.push((t, dur, rng.gen_range(0.5..1.0)));
            t += dur;
            t += if rng.gen_bool(0.25) {
                rng.gen_range(0.3..0.7)
            } else {
                rng.gen_range(0.03..0.15)
            };
        }
        Envelope { syllables }
    }

    pub fn at(&self, t: f64) -> f64 {
        self.syllables
            .iter()
            .find(|&&(s, d, _)| t >= s && t < s + d)
            .map(|&(s, d, p)| p * (std::f64::consts::PI * (t - s) / d).sin().powi(2))
            .unwrap_or(0.0)
    }
}

fn emotion_offset(e: Emotion, k_psi: usize) -> Vec<f64> {
    let mut v = vec![0.0; k_psi];
    if e != Emotion::Neutral {
        for (k, o) in v.iter_mut().enumerate().skip(1) {
            *o = 0.6 * (2.1 * e.index() as f64 + 0.9 * k as f64).cos();
        }
    }
    v
}

/// Moving average over `±radius` samples with edge clamping.
fn smooth(x: &[f64], radius: usize) -> Vec<f64> {
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let r = radius as isize;
            let s: f64 = (i - r..=i + r).map(|j| x[j.clamp(0, n - 1) as usize]).sum();
            s / (2 * r + 1) as f64
        })
        .collect()
}

/// Waveform and motion for one clip. The audio depends only on `audio_seed`;
/// `seed` drives identity and head-motion noise.
pub fn synth_clip_with_audio(seed: u64, audio_seed: u64, duration_s: f64, style: Style, dims: SynthDims) -> Result<SynthClip> {
    dims.check()?;
    if !(duration_s >= 4.0) {
        return Err(Error::Config(format!("clip duration must be at least 4 s, got {duration_s}")));
    }
    let env = Envelope::random(audio_seed, duration_s);
    let mut arng = ChaCha8Rng::seed_from_u64(audio_seed ^ 0xa0d1_0000);
    let f0 = arng.gen_range(110.0..220.0);
    let phases: Vec<f64> = (0..4).map(|_| arng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let n_samples = (duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut phase = 0.0;
    let mut waveform = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = i as f64 / SAMPLE_RATE as f64;
        let f = f0 * (1.0 + 0.05 * (std::f64::consts::TAU * 0.7 * t).sin());
        phase += std::f64::consts::TAU * f / SAMPLE_RATE as f64;
        let tone: f64 = (1..=4).map(|h| (h as f64 * phase + phases[h - 1]).sin() / h as f64).sum();
        waveform.push(0.4 * env.at(t) * tone);
    }

    let frames = (duration_s * FPS).floor() as usize;
    let envelope: Vec<f64> = (0..frames).map(|f| env.at((f as f64 + 0.5) / FPS)).collect();
    let slow = smooth(&envelope, 10);
    let slow_mean = slow.iter().sum::<f64>() / frames as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let beta: Vec<f64> = (0..dims.k_beta).map(|_| 0.3 * gauss()).collect();
    let noise: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let raw: Vec<f64> = (0..frames).map(|_| gauss()).collect();
            let s = smooth(&raw, 7);
            let sd = popstd(&s).max(1e-9);
            s.iter().map(|v| v / sd).collect()
        })
        .collect();
    let mouth_amp = style.mouth.amplitude();
    let head_amp = style.head.amplitude();
    let offset = emotion_offset(style.emotion, dims.k_psi);
    let axis_gain = [1.0, -0.6, 0.4];
    let k_theta = 3 + dims.k_pc;
    let mut feats = Vec::with_capacity(frames * (dims.k_psi + k_theta));
    for f in 0..frames {
        let psi0 = mouth_amp * envelope[f];
        feats.push(psi0);
        for (k, o) in offset.iter().enumerate().skip(1) {
            feats.push(o + 0.15 * (1.3 * k as f64).sin() * psi0);
        }
        let drive = 4.0 * (slow[f] - slow_mean);
        for c in 0..3 {
            feats.push(head_amp * (axis_gain[c] * drive + 0.25 * noise[c][f]));
        }
        feats.push(0.2 * psi0);
        feats.push(0.3 * offset[1]);
        feats.push(0.1 * slow[f]);
        feats.extend(std::iter::repeat(0.0).take(dims.k_pc - 3));
    }
    let motion = MotionSequence::new(FPS, dims.k_psi, k_theta, beta, feats)?;
    Ok(SynthClip {
        waveform,
        motion,
        style,
        style_caption: style.style_caption(),
        emotion_caption: style.emotion_caption(),
        style_params: StyleParams {
            mouth_amp,
            head_amp,
            emotion_offset: offset,
        },
        envelope,
    })
}

/// One clip whose audio and motion noise both derive from `seed`.
pub fn synth_clip(seed: u64, duration_s: f64, style: Style, dims: SynthDims) -> Result<SynthClip> {
    synth_clip_with_audio(seed, seed, duration_s, style, dims)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub wav: String,
    pub motion: String,
    pub captions: String,
    pub style: Style,
    pub style_caption: String,
    pub emotion_caption: String,
    pub style_params: StyleParams,
    pub seed: u64,
    pub audio_seed: u64,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub seed: u64,
    pub fps: f64,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub dims: SynthDims,
    pub head_model: String,
    pub clips: Vec<ClipEntry>,
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
    pub mean_channel_std: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const HEAD_MODEL_FILE: &str = "head_model.json";

/// Seeds for clip `i`: clips in the same group of four share audio.
pub fn clip_seeds(seed: u64, i: usize) -> (u64, u64) {
    let mix = |x: u64| {
        let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    (mix(seed ^ (i as u64) << 20), mix(seed.wrapping_mul(31) ^ ((i / 4) as u64) << 40))
}

/// Writes a balanced style grid of `n_clips` clips plus head model and manifest.
pub fn synth_corpus(seed: u64, n_clips: usize, duration_s: f64, out_dir: &Path, dims: SynthDims) -> Result<CorpusManifest> {
    if n_clips == 0 {
        return Err(Error::Config("corpus needs at least one clip".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let head = make_toy_head_model(seed, dims.vertices, dims.k_beta, dims.k_psi, dims.k_pc)?;
    head.save(&out_dir.join(HEAD_MODEL_FILE))?;
    let mut clips = Vec::with_capacity(n_clips);
    let mut motions = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let style = Style::grid(i);
        let (clip_seed, audio_seed) = clip_seeds(seed, i);
        let clip = synth_clip_with_audio(clip_seed, audio_seed, duration_s, style, dims)?;
        let id = format!("clip_{i:03}");
        let entry = ClipEntry {
            wav: format!("{id}.wav"),
            motion: format!("{id}.motion.json"),
            captions: format!("{id}.captions.json"),
            id,
            style,
            style_caption: clip.style_caption.clone(),
            emotion_caption: clip.emotion_caption.clone(),
            style_params: clip.style_params.clone(),
            seed: clip_seed,
            audio_seed,
            frames: clip.motion.frames(),
        };
        write_wav(&out_dir.join(&entry.wav), &clip.waveform)?;
        clip.motion.save(&out_dir.join(&entry.motion))?;
        CaptionTimeline::constant(&clip.style_caption, &clip.emotion_caption).save(&out_dir.join(&entry.captions))?;
        clips.push(entry);
        motions.push(clip.motion);
    }
    let (channel_mean, channel_std) = channel_stats(&motions);
    let manifest = CorpusManifest {
        version: 1,
        seed,
        fps: FPS,
        sample_rate: SAMPLE_RATE,
        duration_s,
        dims,
        head_model: HEAD_MODEL_FILE.into(),
        clips,
        mean_channel_std: channel_std.iter().sum::<f64>() / channel_std.len() as f64,
        channel_mean,
        channel_std,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Population mean and std of every motion channel over all frames.
pub fn channel_stats(motions: &[MotionSequence]) -> (Vec<f64>, Vec<f64>) {
    let w = motions[0].width();
    let columns: Vec<Vec<f64>> = (0..w)
        .map(|c| motions.iter().flat_map(|m| (0..m.frames()).map(move |t| m.frame(t)[c])).collect())
        .collect();
    let mean = columns.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let std = columns.iter().map(|c| popstd(c)).collect();
    (mean, std)
}

#[derive(Clone, Debug)]
pub struct LoadedClip {
    pub entry: ClipEntry,
    pub motion: MotionSequence,
    pub audio: Arc<AudioFeatures>,
    pub timeline: CaptionTimeline,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
    pub head: HeadModel,
    pub clips: Vec<LoadedClip>,
}

impl Corpus {
    pub fn load(dir: &Path, encoder: &AudioEncoder) -> Result<Self> {
        let manifest: CorpusManifest = read_json(&dir.join(MANIFEST_FILE))?;
        let head = HeadModel::load(&dir.join(&manifest.head_model))?;
        let clips = manifest
            .clips
            .iter()
            .map(|e| {
                let motion = MotionSequence::load(&dir.join(&e.motion))?;
                head.check_motion(&motion)?;
                let wav = read_wav(&dir.join(&e.wav))?;
                Ok(LoadedClip {
                    entry: e.clone(),
                    motion,
                    audio: Arc::new(encoder.encode(&wav, SAMPLE_RATE)?),
                    timeline: CaptionTimeline::load(&dir.join(&e.captions))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            dir: dir.to_path_buf(),
            manifest,
            head,
            clips,
        })
    }
}

#[derive(Clone, Debug)]
pub struct WindowItem {
    pub clip: usize,
    pub start_frame: usize,
    pub motion: MotionSequence,
    /// Whole-clip features; see [`WindowItem::audio_window`].
    pub audio: Arc<AudioFeatures>,
    pub style_caption: String,
    pub emotion_caption: String,
}

impl WindowItem {
    /// Features whose timestamps fall inside this window, times relative to its start.
    pub fn audio_window(&self, window: usize) -> Option<(crate::autodiff::Tensor, Vec<f64>)> {
        let s = self.start_frame as f64;
        self.audio.span(s, s + window as f64, s)
    }
}

/// Windows `[k, k + W)` for `k = 0, stride, 2·stride, …` over every clip, in clip order.
pub fn window_iterator(corpus: &Corpus, window: usize, stride: usize) -> Result<Vec<WindowItem>> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    let mut out = Vec::new();
    for (ci, clip) in corpus.clips.iter().enumerate() {
        let n = clip.motion.frames();
        if window > n {
            log::warn!("skipping {}: {n} frames is shorter than the {window}-frame window", clip.entry.id);
            continue;
        }
        let mut start = 0;
        while start + window <= n {
            let caps = clip.timeline.captions_for_window(start);
            out.push(WindowItem {
                clip: ci,
                start_frame: start,
                motion: clip.motion.slice(start, window)?,
                audio: clip.audio.clone(),
                style_caption: caps.style.clone(),
                emotion_caption: caps.emotion.clone(),
            });
            start += stride;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn style(m: Mouth) -> Style {
        Style {
            mouth: m,
            head: HeadMotion::Lively,
            emotion: Emotion::Happy,
        }
    }

    #[test]
    fn deterministic_and_mouth_ratio() {
        let d = SynthDims::default();
        let a = synth_clip(3, 4.0, style(Mouth::Large), d).unwrap();
        assert_eq!(a, synth_clip(3, 4.0, style(Mouth::Large), d).unwrap());
        let b = synth_clip(3, 4.0, style(Mouth::Small), d).unwrap();
        let psi0 = |c: &SynthClip| (0..c.motion.frames()).map(|t| c.motion.psi(t)[0]).collect::<Vec<_>>();
        let ratio = popstd(&psi0(&a)) / popstd(&psi0(&b));
        assert!((ratio - 3.0).abs() < 1e-12, "{ratio}");
        assert_eq!(a.motion.frames(), 100);
        assert_eq!(a.waveform.len(), 64000);
    }

    #[test]
    fn silence_means_closed_mouth_and_peaks_align() {
        let c = synth_clip(5, 6.0, style(Mouth::Large), SynthDims::default()).unwrap();
        let psi0: Vec<f64> = (0..c.motion.frames()).map(|t| c.motion.psi(t)[0]).collect();
        assert!(c.envelope.iter().any(|&e| e == 0.0));
        for (e, p) in c.envelope.iter().zip(&psi0) {
            if *e == 0.0 {
                assert_eq!(*p, 0.0);
            }
        }
        let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        assert_eq!(argmax(&c.envelope), argmax(&psi0));
    }

    #[test]
    fn captions_are_bijective_over_grid() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..16 {
            let s = Style::grid(i);
            assert_eq!(parse_captions(&s.style_caption(), &s.emotion_caption()), Some(s));
            assert!(seen.insert((s.style_caption(), s.emotion_caption())));
        }
    }

    #[test]
    fn short_duration_rejected() {
        assert!(synth_clip(0, 3.9, style(Mouth::Small), SynthDims::default()).is_err());
    }

    #[test]
    fn corpus_windows() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_corpus(1, 2, 8.0, dir.path(), SynthDims::default()).unwrap();
        assert_eq!(m.clips.len(), 2);
        assert_eq!(m.channel_std.len(), 16);
        let enc = AudioEncoder::new(Default::default()).unwrap();
        let corpus = Corpus::load(dir.path(), &enc).unwrap();
        assert_eq!(corpus.clips[0].motion.frames(), 200);
        assert_eq!(window_iterator(&corpus, 100, 100).unwrap().len(), 4);
        let w = window_iterator(&corpus, 100, 50).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(w[1].audio_window(100).unwrap().0.rows(), 200);
        assert_eq!(window_iterator(&corpus, 300, 100).unwrap().len(), 0);
        let again = tempfile::tempdir().unwrap();
        synth_corpus(1, 2, 8.0, again.path(), SynthDims::default()).unwrap();
        for f in ["manifest.json", "clip_001.wav", "clip_001.motion.json"] {
            assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap());
        }
    }
}
