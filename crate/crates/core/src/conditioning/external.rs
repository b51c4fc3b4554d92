use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::audio::{AudioFeatures, FPS};
use super::text::{CaptionEmbedding, CaptionKind};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::head::{read_json, write_json};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Audio,
    Style,
    Emotion,
}

/// JSON sidecar stored next to an external `.ctten` embedding as `<file>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: EmbeddingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum External {
    Audio(AudioFeatures),
    Caption(CaptionEmbedding),
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn load_external_embedding(path: &Path) -> Result<External> {
    let side: Sidecar = read_json(&sidecar_path(path))?;
    let t = Tensor::read_ctten(path)?;
    if t.rank() != 2 {
        return Err(Error::format(format!(
            "{}: external embeddings must be rank 2, got {:?}",
            path.display(),
            t.shape()
        )));
    }
    match side.kind {
        EmbeddingKind::Audio => {
            let rate = side
                .rate
                .ok_or_else(|| Error::format(format!("{}: audio sidecar needs a rate", path.display())))?;
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::format(format!("{}: invalid rate {rate}", path.display())));
            }
            if (t.rows() as f64) < rate / FPS {
                return Err(Error::format(format!(
                    "{}: {} rows at rate {rate} cover less than one frame",
                    path.display(),
                    t.rows()
                )));
            }
            Ok(External::Audio(AudioFeatures::new(t, rate, FPS)?))
        }
        kind => {
            if side.rate.is_some() {
                return Err(Error::format(format!("{}: caption embeddings take no rate", path.display())));
            }
            let kind = if kind == EmbeddingKind::Style { CaptionKind::Style } else { CaptionKind::Emotion };
            Ok(External::Caption(CaptionEmbedding::new(t, side.text.unwrap_or_default(), kind)?))
        }
    }
}

pub fn save_external_embedding(path: &Path, tensor: &Tensor, sidecar: &Sidecar) -> Result<()> {
    tensor.write_ctten(path)?;
    write_json(&sidecar_path(path), sidecar)
}
