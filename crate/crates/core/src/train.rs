//! Shared training plumbing: batch sampling, learning-rate schedule and
//! order-preserving gradient accumulation.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "CAPTALK_THREADS";

pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

pub fn thread_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Linear warmup followed by cosine decay to `final_frac · lr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr: f64,
    pub warmup: usize,
    pub final_frac: f64,
}

impl Schedule {
    pub fn constant(lr: f64) -> Self {
        Schedule {
            lr,
            warmup: 0,
            final_frac: 1.0,
        }
    }

    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = total.saturating_sub(self.warmup).max(1) as f64;
        let prog = ((step - self.warmup) as f64 / span).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * prog).cos());
        self.lr * (self.final_frac + (1.0 - self.final_frac) * cos)
    }
}

/// Epoch-wise shuffled index stream.
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize) -> Self {
        BatchSampler {
            order: (0..n).collect(),
            pos: n,
        }
    }

    pub fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Runs `f` on a fresh graph per job, backpropagates each returned loss and
/// returns the batch-mean gradient plus the per-job side outputs in job order.
pub fn batch_gradients<J, T, F>(pool: &rayon::ThreadPool, params: &ParamStore, jobs: &[J], f: F) -> Result<(Vec<Tensor>, Vec<T>)>
where
    J: Sync,
    T: Send,
    F: Fn(&J, &mut Graph, &Bound) -> Result<(Var, T)> + Sync,
{
    let results: Vec<Result<(Vec<Tensor>, T)>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut g = Graph::new();
                let bound = params.bind(&mut g);
                let (loss, out) = f(job, &mut g, &bound)?;
                g.backward(loss)?;
                Ok((params.grads(&g, &bound), out))
            })
            .collect()
    });
    let mut total: Option<Vec<Tensor>> = None;
    let mut outs = Vec::with_capacity(jobs.len());
    for r in results {
        let (grads, out) = r?;
        match total.as_mut() {
            None => total = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                }
            }
        }
        outs.push(out);
    }
    let mut total = total.ok_or_else(|| Error::Config("empty batch".into()))?;
    let k = 1.0 / jobs.len() as f64;
    total.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|x| *x *= k));
    Ok((total, outs))
}
