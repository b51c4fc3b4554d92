use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionKind {
    Style,
    Emotion,
}

impl CaptionKind {
    pub fn index(self) -> usize {
        match self {
            CaptionKind::Style => 0,
            CaptionKind::Emotion => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionEmbedding {
    /// `[T_t, D_t]`, one row per token.
    pub tokens: Tensor,
    pub text: String,
    pub kind: CaptionKind,
}

impl CaptionEmbedding {
    pub fn new(tokens: Tensor, text: String, kind: CaptionKind) -> Result<Self> {
        if tokens.rank() != 2 {
            return Err(Error::format(format!("caption embedding must be [T, D], got {:?}", tokens.shape())));
        }
        Ok(CaptionEmbedding { tokens, text, kind })
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }
}

const NULL_TOKEN: &str = "\u{0}null";

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Hash-seeded token embeddings: each lowercase whitespace token maps to a
/// pseudo-random unit vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub seed: u64,
    pub dim: usize,
}

impl TextEncoder {
    pub fn new(seed: u64, dim: usize) -> Self {
        TextEncoder { seed, dim }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ self.seed.rotate_left(17));
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    pub fn encode(&self, caption: &str, kind: CaptionKind) -> CaptionEmbedding {
        let lower = caption.to_lowercase();
        let mut tokens: Vec<&str> = lower.split_whitespace().collect();
        if tokens.is_empty() {
            tokens.push(NULL_TOKEN);
        }
        let data = tokens.iter().flat_map(|t| self.token_vector(t)).collect();
        CaptionEmbedding {
            tokens: Tensor::new(vec![tokens.len(), self.dim], data).expect("token rows"),
            text: caption.to_string(),
            kind,
        }
    }
}
