use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{CodecConfig, CodecModel, CodecSample, LossValues, NormStats, QuantMode};
use crate::autodiff::{AdamW, AdamWConfig};
use crate::error::{Error, Result};
use crate::head::{read_json, write_json, HeadModel, HeadModelJson};
use crate::train::{batch_gradients, thread_pool, BatchSampler, Schedule};

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS_DIR: &str = "params";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecTrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub schedule: Schedule,
    pub adam: AdamWConfig,
    pub seed: u64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        CodecTrainConfig {
            iters: 3000,
            batch: 4,
            schedule: Schedule {
                lr: 2e-3,
                warmup: 100,
                final_frac: 0.05,
            },
            adam: AdamWConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecLogRow {
    pub iter: usize,
    pub lr: f64,
    pub losses: LossValues,
}

pub fn codec_log_csv(rows: &[CodecLogRow]) -> String {
    let mut s = String::from("iter,lr,loss,l1,full_vertex,lip_vertex,vq\n");
    for r in rows {
        let l = &r.losses;
        let _ = writeln!(
            s,
            "{},{:e},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.iter, r.lr, l.total, l.l1, l.full_vertex, l.lip_vertex, l.vq
        );
    }
    s
}

/// AdamW on the summed codec losses; batches are drawn epoch-wise with a seeded shuffle.
pub fn train_codec(
    samples: &[CodecSample],
    head: HeadModel,
    config: CodecConfig,
    tc: &CodecTrainConfig,
    mut on_step: impl FnMut(&CodecLogRow),
) -> Result<(CodecModel, Vec<CodecLogRow>)> {
    if samples.is_empty() {
        return Err(Error::Config("codec training set is empty".into()));
    }
    if tc.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let stats = NormStats::from_samples(samples);
    let mut model = CodecModel::new(config, head, stats, tc.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut sampler = BatchSampler::new(samples.len());
    let mut opt = AdamW::new(tc.adam, model.params().values());
    let pool = thread_pool()?;
    let mut log = Vec::with_capacity(tc.iters);
    for iter in 0..tc.iters {
        let batch: Vec<&CodecSample> = sampler.next_batch(tc.batch, &mut rng).into_iter().map(|i| &samples[i]).collect();
        let (grads, losses) = batch_gradients(&pool, model.params(), &batch, |s, g, p| {
            let out = model.forward_losses(g, p, s, &QuantMode::Live)?;
            Ok((out.losses.total, LossValues::read(g, &out.losses)))
        })?;
        let mut mean = LossValues::default();
        for l in &losses {
            mean.add_scaled(l, 1.0 / losses.len() as f64);
        }
        opt.config.lr = tc.schedule.lr_at(iter, tc.iters);
        opt.step(model.params_mut().values_mut(), &grads)?;
        let row = CodecLogRow {
            iter,
            lr: opt.config.lr,
            losses: mean,
        };
        on_step(&row);
        log.push(row);
    }
    model.params_mut().round_to_f32();
    Ok((model, log))
}

/// Mean absolute reconstruction error per frame and channel over `samples`.
pub fn mean_l1(model: &CodecModel, samples: &[CodecSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let r = model.reconstruct(&s.motion)?;
        total += r.data().iter().zip(s.motion.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / r.numel() as f64;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CodecManifest {
    kind: String,
    version: u32,
    seed: u64,
    config: CodecConfig,
    stats: NormStats,
    head_model: HeadModelJson,
    params: Vec<String>,
}

impl CodecModel {
    /// Writes `manifest.json` plus one `.ctten` per parameter.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = CodecManifest {
            kind: "codec".into(),
            version: 1,
            seed: self.seed,
            config: self.config.clone(),
            stats: self.stats.clone(),
            head_model: self.head.to_json(),
            params: self.params().names().to_vec(),
        };
        write_json(&dir.join(MANIFEST), &manifest)?;
        self.params().save_dir(&dir.join(PARAMS_DIR))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: CodecManifest = read_json(&dir.join(MANIFEST))?;
        if m.kind != "codec" {
            return Err(Error::Config(format!("{} is a {} checkpoint, not a codec", dir.display(), m.kind)));
        }
        let head = HeadModel::from_json(m.head_model)?;
        let mut model = CodecModel::new(m.config, head, m.stats, m.seed)?;
        if model.params().names() != m.params.as_slice() {
            return Err(Error::Config("codec checkpoint parameter list does not match the configuration".into()));
        }
        model.params_mut().load_dir(&dir.join(PARAMS_DIR))?;
        Ok(model)
    }
}
