//! Audio and caption encoders, external embeddings and caption timelines.

pub mod audio;
pub mod external;
pub mod text;
pub mod timeline;

pub use audio::{read_wav, write_wav, AudioEncoder, AudioEncoderConfig, AudioFeatures, FPS, SAMPLE_RATE};
pub use external::{load_external_embedding, save_external_embedding, EmbeddingKind, External, Sidecar};
pub use text::{CaptionEmbedding, CaptionKind, TextEncoder};
pub use timeline::{CaptionTimeline, TimelineEntry};

/// Audio features plus the two caption embeddings for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningBundle {
    pub audio: AudioFeatures,
    pub style: CaptionEmbedding,
    pub emotion: CaptionEmbedding,
}
