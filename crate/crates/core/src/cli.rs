//! Command-line front end. Exit codes: 0 success, 2 usage, 3 input or file
//! error, 4 model/config incompatibility.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::codec::{codec_log_csv, train_codec, CodecConfig, CodecModel, CodecSample, CodecTrainConfig};
use crate::conditioning::{
    load_external_embedding, read_wav, AudioEncoder, AudioEncoderConfig, AudioFeatures, CaptionTimeline, External,
    SAMPLE_RATE,
};
use crate::error::{Error, Result};
use crate::generator::{
    ar_log_csv, build_ar_samples, generate, train_ar, ArTrainConfig, Generator, GeneratorConfig, SamplingOptions,
};
use crate::head::{write_json, MotionSequence};
use crate::metrics::{decode_vertices, evaluate_files, lve, mhd, FrameAlign};
use crate::synth::{synth_corpus, window_iterator, Corpus, SynthDims, MANIFEST_FILE};
use crate::train::Schedule;

pub const TRAIN_LOG: &str = "train_log.csv";

#[derive(Debug, Parser)]
#[command(name = "captalk", version, about = "Caption-conditioned speech-driven facial motion toolkit")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus of styled talking clips.
    SynthData(SynthDataArgs),
    /// Train the multi-scale motion codec.
    TrainCodec(TrainCodecArgs),
    /// Train the autoregressive generator on codes from a frozen codec.
    TrainAr(TrainArArgs),
    /// Generate motion from audio and captions.
    Generate(GenerateArgs),
    /// Encode and decode a motion file through the codec.
    Roundtrip(RoundtripArgs),
    /// Compute lip-sync and dynamics metrics between two motion files.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub clips: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 16.0)]
    pub duration: f64,
}

#[derive(Debug, Args)]
pub struct TrainCodecArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3000)]
    pub iters: usize,
    /// Peak learning rate (linear warmup, cosine decay).
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Window stride in frames; defaults to the window length.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub w_full: f64,
    #[arg(long, default_value_t = 2.0)]
    pub w_lips: f64,
    #[arg(long, default_value_t = 0.25)]
    pub beta_commit: f64,
}

#[derive(Debug, Args)]
pub struct TrainArArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub codec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub flip_prob: f64,
    #[arg(long, default_value_t = 0.1)]
    pub cond_drop_prob: f64,
    /// Comma-separated scale lengths; defaults to the codec's.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<usize>>,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 25)]
    pub k_ctx: usize,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("captions").required(true).args(["style", "timeline"]))]
pub struct GenerateArgs {
    #[arg(long)]
    pub codec: PathBuf,
    #[arg(long)]
    pub ar: PathBuf,
    /// 16 kHz mono PCM16 WAV, or an external `.ctten` audio embedding.
    #[arg(long)]
    pub audio: PathBuf,
    #[arg(long)]
    pub style: Option<String>,
    #[arg(long, requires = "style")]
    pub emotion: Option<String>,
    /// JSON caption timeline; excludes --style/--emotion.
    #[arg(long, conflicts_with_all = ["style", "emotion"])]
    pub timeline: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// 0 selects the sign of each bit logit.
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    #[arg(long)]
    pub codec: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub head_model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Truncate or pad the prediction to the ground-truth length.
    #[arg(long)]
    pub fit_frames: bool,
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::SynthData(a) => synth_data(a),
        Command::TrainCodec(a) => train_codec_cmd(a),
        Command::TrainAr(a) => train_ar_cmd(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Roundtrip(a) => roundtrip(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    }
}

fn synth_data(a: &SynthDataArgs) -> Result<()> {
    if a.clips == 0 {
        return Err(Error::Domain("--clips must be at least 1".into()));
    }
    synth_corpus(a.seed, a.clips, a.duration, &a.out, SynthDims::default())?;
    println!("{}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load(dir, &AudioEncoder::new(AudioEncoderConfig::default())?)
}

fn train_codec_cmd(a: &TrainCodecArgs) -> Result<()> {
    let corpus = load_corpus(&a.data)?;
    let config = CodecConfig {
        w_full: a.w_full,
        w_lips: a.w_lips,
        beta_commit: a.beta_commit,
        ..CodecConfig::default()
    };
    let items = window_iterator(&corpus, config.window, a.stride.unwrap_or(config.window))?;
    let samples = items
        .iter()
        .map(|w| CodecSample::new(&corpus.head, &w.motion))
        .collect::<Result<Vec<_>>>()?;
    let tc = CodecTrainConfig {
        iters: a.iters,
        batch: a.batch,
        schedule: Schedule {
            lr: a.lr,
            warmup: a.warmup,
            final_frac: 0.05,
        },
        seed: a.seed,
        ..CodecTrainConfig::default()
    };
    let (model, log) = train_codec(&samples, corpus.head.clone(), config, &tc, |r| {
        if r.iter % 100 == 0 {
            log::info!("iter {} loss {:.6} l1 {:.6}", r.iter, r.losses.total, r.losses.l1);
        }
    })?;
    model.save(&a.out)?;
    write_text(&a.out.join(TRAIN_LOG), &codec_log_csv(&log))?;
    match log.last() {
        Some(r) => println!("final loss {:.6}", r.losses.total),
        None => println!("no iterations run; wrote initial checkpoint"),
    }
    Ok(())
}

fn train_ar_cmd(a: &TrainArArgs) -> Result<()> {
    let codec = CodecModel::load(&a.codec)?;
    let corpus = load_corpus(&a.data)?;
    let c = &codec.config;
    let scales = a.scales.clone().unwrap_or_else(|| c.scales.clone());
    let config = GeneratorConfig {
        window: scales.last().copied().unwrap_or(0),
        scales,
        code_dim: c.code_dim,
        d_model: a.d_model,
        layers: a.layers,
        heads: a.heads,
        ffn_hidden: 2 * a.d_model,
        k_ctx: a.k_ctx,
        flip_prob: a.flip_prob,
        cond_drop_prob: a.cond_drop_prob,
        seed: a.seed,
        audio_dim: AudioEncoderConfig::default().bands,
        ..GeneratorConfig::default()
    };
    config.validate()?;
    config.check_codec(&c.scales, c.code_dim, c.window)?;
    let items = window_iterator(&corpus, c.window, a.stride.unwrap_or(c.window))?;
    let samples = build_ar_samples(&items, &codec, &config)?;
    let tc = ArTrainConfig {
        iters: a.iters,
        batch: a.batch,
        schedule: Schedule {
            lr: a.lr,
            warmup: a.warmup,
            final_frac: 0.05,
        },
        seed: a.seed,
        ..ArTrainConfig::default()
    };
    let (gen, log) = train_ar(&samples, config, &tc, |r| {
        if r.iter % 100 == 0 {
            log::info!("iter {} loss {:.6} bit accuracy {:.4}", r.iter, r.loss, r.bit_accuracy);
        }
    })?;
    gen.save(&a.out)?;
    write_text(&a.out.join(TRAIN_LOG), &ar_log_csv(&log))?;
    match log.last() {
        Some(r) => println!("final loss {:.6} bit accuracy {:.4}", r.loss, r.bit_accuracy),
        None => println!("no iterations run; wrote initial checkpoint"),
    }
    Ok(())
}

fn load_audio(path: &Path) -> Result<(AudioFeatures, f64)> {
    if path.extension().is_some_and(|e| e == "ctten") {
        match load_external_embedding(path)? {
            External::Audio(f) => Ok((f, 0.0)),
            External::Caption(_) => Err(Error::format(format!("{} holds a caption embedding, not audio", path.display()))),
        }
    } else {
        let enc = AudioEncoder::new(AudioEncoderConfig::default())?;
        let f = enc.encode(&read_wav(path)?, SAMPLE_RATE)?;
        Ok((f, enc.config().silence()))
    }
}

fn generate_cmd(a: &GenerateArgs) -> Result<()> {
    let codec = CodecModel::load(&a.codec)?;
    let gen = Generator::load(&a.ar)?;
    let timeline = match (&a.timeline, &a.style) {
        (Some(p), _) => CaptionTimeline::load(p)?,
        (None, Some(s)) => CaptionTimeline::constant(s, a.emotion.as_deref().unwrap_or("")),
        (None, None) => return Err(Error::Domain("either --style or --timeline is required".into())),
    };
    let (audio, silence) = load_audio(&a.audio)?;
    let opts = SamplingOptions {
        temperature: a.temperature,
        seed: a.seed,
        silence,
    };
    let (motion, windows) = generate(&gen, &codec, &audio, &timeline, &opts)?;
    motion.save(&a.out)?;
    println!("frames {}", motion.frames());
    for (k, w) in windows.iter().enumerate() {
        println!("window {} start {} style {:?} emotion {:?}", k + 1, w.start_frame, w.style, w.emotion);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub start_frame: usize,
    pub frames: usize,
    pub l1: f64,
    pub mhd: f64,
    pub lve: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub frames: usize,
    pub window: usize,
    pub l1: f64,
    pub mhd: f64,
    pub lve: f64,
    pub windows: Vec<WindowReport>,
}

/// Encodes and decodes `motion` window by window; the trailing partial
/// window repeats the last frame and is trimmed after decoding.
pub fn roundtrip_motion(codec: &CodecModel, motion: &MotionSequence) -> Result<(MotionSequence, RoundtripReport)> {
    let head = &codec.head;
    head.check_motion(motion)?;
    let w = codec.config.window;
    let width = motion.width();
    let n = motion.frames();
    let mut recon = Vec::with_capacity(n * width);
    let mut windows = Vec::new();
    for start in (0..n).step_by(w) {
        let len = w.min(n - start);
        let mut data = motion.features()[start * width..(start + len) * width].to_vec();
        let last = data[data.len() - width..].to_vec();
        while data.len() < w * width {
            data.extend_from_slice(&last);
        }
        let x = crate::autodiff::Tensor::new(vec![w, width], data)?;
        let r = codec.reconstruct(&x)?;
        let r = &r.data()[..len * width];
        let l1 = r.iter().zip(x.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / r.len() as f64;
        let gt = motion.slice(start, len)?;
        let pred = MotionSequence::new(motion.fps, motion.k_psi, motion.k_theta, motion.beta.clone(), r.to_vec())?;
        let (pv, gv) = (decode_vertices(head, &pred)?, decode_vertices(head, &gt)?);
        windows.push(WindowReport {
            start_frame: start,
            frames: len,
            l1,
            mhd: mhd(&pv, &gv)?,
            lve: lve(&pv, &gv, &head.lip_indices)?,
        });
        recon.extend_from_slice(r);
    }
    let weight = |f: fn(&WindowReport) -> f64| windows.iter().map(|r| f(r) * r.frames as f64).sum::<f64>() / n as f64;
    let report = RoundtripReport {
        frames: n,
        window: w,
        l1: weight(|r| r.l1),
        mhd: weight(|r| r.mhd),
        lve: weight(|r| r.lve),
        windows: windows.clone(),
    };
    let out = MotionSequence::new(motion.fps, motion.k_psi, motion.k_theta, motion.beta.clone(), recon)?;
    Ok((out, report))
}

fn roundtrip(a: &RoundtripArgs) -> Result<()> {
    let codec = CodecModel::load(&a.codec)?;
    let motion = MotionSequence::load(&a.input)?;
    let (recon, report) = roundtrip_motion(&codec, &motion)?;
    recon.save(&a.out)?;
    write_json(&a.report, &report)?;
    println!("frames {} l1 {:.6} mhd {:.6} lve {:.6}", report.frames, report.l1, report.mhd, report.lve);
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let align = if a.fit_frames { FrameAlign::Fit } else { FrameAlign::Strict };
    let report = evaluate_files(&a.pred, &a.gt, &a.head_model, align)?;
    report.save(&a.out)?;
    println!(
        "lve {:.6} mhd {:.6} fdd {:.6} lodd {:.6} hpdd {:.6}",
        report.lve, report.mhd, report.fdd, report.lodd, report.hpdd
    );
    Ok(())
}
