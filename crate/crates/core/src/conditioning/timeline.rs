use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{read_json, write_json};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub start_frame: usize,
    pub style: String,
    pub emotion: String,
}

/// Caption pairs switched at window boundaries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionTimeline {
    entries: Vec<TimelineEntry>,
}

impl CaptionTimeline {
    pub fn new(entries: Vec<TimelineEntry>) -> Result<Self> {
        if entries.first().map(|e| e.start_frame) != Some(0) {
            return Err(Error::format("caption timeline must start at frame 0"));
        }
        if entries.windows(2).any(|w| w[0].start_frame >= w[1].start_frame) {
            return Err(Error::format("caption timeline start frames must be strictly increasing"));
        }
        Ok(CaptionTimeline { entries })
    }

    pub fn constant(style: &str, emotion: &str) -> Self {
        CaptionTimeline {
            entries: vec![TimelineEntry {
                start_frame: 0,
                style: style.to_string(),
                emotion: emotion.to_string(),
            }],
        }
    }

    pub fn entries(&self) -> &[TimelineEntry] {
        &self.entries
    }

    /// Entry with the largest start frame not after `window_start`.
    pub fn captions_for_window(&self, window_start: usize) -> &TimelineEntry {
        let i = self.entries.partition_point(|e| e.start_frame <= window_start);
        &self.entries[i.saturating_sub(1)]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(read_json(path)?)
    }
}
