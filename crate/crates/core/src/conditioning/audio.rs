use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const FPS: f64 = 25.0;

/// Time-stamped audio feature rows; `times[j]` is in video-frame units.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioFeatures {
    pub features: Tensor,
    pub rate: f64,
    pub fps: f64,
    pub times: Vec<f64>,
}

impl AudioFeatures {
    /// Features at `rate` per second stamped at `(j + 0.5) · fps / rate`.
    pub fn new(features: Tensor, rate: f64, fps: f64) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::format(format!("audio features must be [T, D], got {:?}", features.shape())));
        }
        if !(rate > 0.0 && rate.is_finite() && fps > 0.0 && fps.is_finite()) {
            return Err(Error::format(format!("invalid feature rate {rate} / fps {fps}")));
        }
        let times = (0..features.rows()).map(|j| (j as f64 + 0.5) * fps / rate).collect();
        Ok(AudioFeatures {
            features,
            rate,
            fps,
            times,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Feature rows per video frame.
    pub fn per_frame(&self) -> f64 {
        self.rate / self.fps
    }

    /// Number of whole video frames covered.
    pub fn frames(&self) -> usize {
        ((self.len() as f64) / self.per_frame() + 1e-9).floor() as usize
    }

    /// Rows whose timestamps fall in `[from, to)` frames, with times shifted by `-origin`.
    pub fn span(&self, from: f64, to: f64, origin: f64) -> Option<(Tensor, Vec<f64>)> {
        let idx: Vec<usize> = (0..self.len()).filter(|&j| self.times[j] >= from && self.times[j] < to).collect();
        if idx.is_empty() {
            return None;
        }
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &j in &idx {
            data.extend_from_slice(self.features.row(j));
        }
        let times = idx.iter().map(|&j| self.times[j] - origin).collect();
        Some((Tensor::new(vec![idx.len(), d], data).expect("rows"), times))
    }

    /// Appends rows until at least `frames` frames are covered.
    pub fn padded_to_frames(&self, frames: usize, fill: f64) -> Result<Self> {
        let need = (frames as f64 * self.per_frame()).ceil() as usize;
        if need <= self.len() {
            return Ok(self.clone());
        }
        let mut data = self.features.data().to_vec();
        data.resize(need * self.dim(), fill);
        AudioFeatures::new(Tensor::new(vec![need, self.dim()], data)?, self.rate, self.fps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioEncoderConfig {
    pub bands: usize,
    pub hop: usize,
    pub window: usize,
    pub floor: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for AudioEncoderConfig {
    fn default() -> Self {
        AudioEncoderConfig {
            bands: 16,
            hop: 320,
            window: 640,
            floor: 1e-6,
            f_min: 60.0,
            f_max: 7600.0,
        }
    }
}

impl AudioEncoderConfig {
    pub fn rate(&self) -> f64 {
        SAMPLE_RATE as f64 / self.hop as f64
    }

    /// Row value produced by digital silence.
    pub fn silence(&self) -> f64 {
        self.floor.ln()
    }
}

/// Log mel-spaced filterbank energies with centered frames.
pub struct AudioEncoder {
    cfg: AudioEncoderConfig,
    fft: Arc<dyn Fft<f64>>,
    hann: Vec<f64>,
    filters: Vec<Vec<(usize, f64)>>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl AudioEncoder {
    pub fn new(cfg: AudioEncoderConfig) -> Result<Self> {
        if cfg.bands == 0 || cfg.hop == 0 || cfg.window < 2 || !(cfg.floor > 0.0) || !(cfg.f_max > cfg.f_min) {
            return Err(Error::Config(format!("invalid audio encoder config {cfg:?}")));
        }
        let n = cfg.window;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let hann = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let bins = n / 2 + 1;
        let bin_hz = SAMPLE_RATE as f64 / n as f64;
        let (m0, m1) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let edges: Vec<f64> = (0..cfg.bands + 2)
            .map(|i| mel_to_hz(m0 + (m1 - m0) * i as f64 / (cfg.bands + 1) as f64))
            .collect();
        let filters = (0..cfg.bands)
            .map(|b| {
                let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect()
            })
            .collect();
        Ok(AudioEncoder {
            cfg,
            fft,
            hann,
            filters,
        })
    }

    pub fn config(&self) -> &AudioEncoderConfig {
        &self.cfg
    }

    /// `⌈n / hop⌉` frames; frame `j` is centered on sample `(j + 0.5) · hop`.
    pub fn encode(&self, samples: &[f64], sample_rate: u32) -> Result<AudioFeatures> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::format(format!("audio must be {SAMPLE_RATE} Hz, got {sample_rate} Hz")));
        }
        if samples.is_empty() {
            return Err(Error::format("audio is empty"));
        }
        let AudioEncoderConfig { hop, window, floor, .. } = self.cfg;
        let frames = samples.len().div_ceil(hop);
        let mut out = Vec::with_capacity(frames * self.cfg.bands);
        let mut buf = vec![Complex::new(0.0, 0.0); window];
        for j in 0..frames {
            let start = (j * hop + hop / 2) as isize - (window / 2) as isize;
            for (i, b) in buf.iter_mut().enumerate() {
                let s = start + i as isize;
                let x = if s >= 0 && (s as usize) < samples.len() { samples[s as usize] } else { 0.0 };
                *b = Complex::new(x * self.hann[i], 0.0);
            }
            self.fft.process(&mut buf);
            for f in &self.filters {
                let e: f64 = f.iter().map(|&(k, w)| w * buf[k].norm_sqr()).sum::<f64>() / window as f64;
                out.push((e + floor).ln());
            }
        }
        AudioFeatures::new(Tensor::new(vec![frames, self.cfg.bands], out)?, self.cfg.rate(), FPS)
    }
}

/// Reads PCM16 mono 16 kHz WAV as samples in `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(format!(
            "{}: only 16-bit PCM is supported, got {:?} {} bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::format(format!("{}: expected mono, got {} channels", path.display(), spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::format(format!(
            "{}: expected {SAMPLE_RATE} Hz, got {} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| v as f64 / 32768.0)
                .map_err(|e| Error::format(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Writes samples as PCM16 mono 16 kHz, clipping to the representable range.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(format!("{}: {other}", path.display())),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc() -> AudioEncoder {
        AudioEncoder::new(AudioEncoderConfig::default()).unwrap()
    }

    #[test]
    fn one_second_gives_fifty_frames() {
        let x: Vec<f64> = (0..16000).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();
        let f = enc().encode(&x, SAMPLE_RATE).unwrap();
        assert_eq!(f.len(), 50);
        assert_eq!(f.dim(), 16);
        assert_eq!(f.frames(), 25);
        assert_eq!(f, enc().encode(&x, SAMPLE_RATE).unwrap());
    }

    #[test]
    fn silence_hits_the_floor() {
        let f = enc().encode(&vec![0.0; 3200], SAMPLE_RATE).unwrap();
        assert!(f.features.data().iter().all(|&v| v == 1e-6f64.ln()));
    }

    #[test]
    fn timestamps_are_half_frame_offsets() {
        let f = AudioFeatures::new(Tensor::zeros(&[4, 2]), 50.0, 25.0).unwrap();
        assert_eq!(f.times, vec![0.25, 0.75, 1.25, 1.75]);
    }

    #[test]
    fn wrong_rate_is_format_error() {
        assert!(matches!(enc().encode(&[0.0; 10], 8000), Err(Error::Format(_))));
    }

    #[test]
    fn tone_energy_lands_in_matching_band() {
        let x: Vec<f64> = (0..16000).map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin()).collect();
        let f = enc().encode(&x, SAMPLE_RATE).unwrap();
        let row = f.features.row(25);
        let best = (0..16).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let centre = |b: usize| {
            let (m0, m1) = (hz_to_mel(60.0), hz_to_mel(7600.0));
            mel_to_hz(m0 + (m1 - m0) * (b + 1) as f64 / 17.0)
        };
        assert!((centre(best) - 1000.0).abs() < (centre(best + 1) - centre(best)));
    }

    #[test]
    fn wav_roundtrip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..100).map(|i| (i as f64 / 100.0) - 0.5).collect();
        write_wav(&p, &x).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.len(), 100);
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1.0 / 32768.0));

        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&stereo), Err(Error::Format(_))));
        assert!(matches!(read_wav(&dir.path().join("missing.wav")), Err(Error::Io { .. })));
    }
}
