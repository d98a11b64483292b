//! Temporal skill encoder: sliding-window clips over episode frames are
//! mapped to unit-norm embeddings by a per-frame backbone, one temporal
//! self-attention block with fixed sinusoidal position codes, mean pooling,
//! and a linear projection.
//!
//! Episodes are first resampled to a fixed frame count M, so downstream
//! consumers always see the same number of clips per episode regardless of
//! playback speed: tempo shows up in clip *content*, not in sequence shape.

mod augment;
mod clips;
mod model;

pub use augment::{augment, AugmentationConfig};
pub use clips::{make_clips, subsample_indices, trailing_window, ClipWindow};
pub use model::{EncoderVars, SkillEncoder};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Window length in (resampled) frames.
    pub l: usize,
    /// Frames between consecutive window starts.
    pub stride: usize,
    /// Frames uniformly resampled per episode before windowing.
    pub m: usize,
    /// Embedding dimension.
    pub d: usize,
    /// Per-frame backbone hidden/output widths; the last entry is the
    /// model width carried through the attention block.
    pub backbone_dims: Vec<usize>,
    /// Hidden widths of the attention block's feed-forward stage.
    pub temporal_dims: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            l: 8,
            stride: 2,
            m: 64,
            d: 16,
            backbone_dims: vec![32, 32],
            temporal_dims: vec![32],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l < 2 {
            return Err(Error::Config(format!("window length must be >= 2, got {}", self.l)));
        }
        if self.stride < 1 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if self.m < self.l {
            return Err(Error::Config(format!(
                "resample count {} must be >= window length {}",
                self.m, self.l
            )));
        }
        if self.d < 2 {
            return Err(Error::Config(format!("embedding dim must be >= 2, got {}", self.d)));
        }
        if self.backbone_dims.is_empty() {
            return Err(Error::Config("backbone needs at least one layer width".into()));
        }
        if self.backbone_dims.iter().chain(&self.temporal_dims).any(|&w| w == 0) {
            return Err(Error::Config("zero layer width".into()));
        }
        Ok(())
    }

    /// Model width after the backbone.
    pub fn width(&self) -> usize {
        *self.backbone_dims.last().unwrap()
    }

    /// Number of clips per episode after resampling to M frames.
    pub fn clips_per_episode(&self) -> usize {
        (self.m - self.l) / self.stride + 1
    }
}
