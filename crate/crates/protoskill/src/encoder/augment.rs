//! Feature-space augmentations for the two-view contrastive objective.
//!
//! Episode frames here are feature vectors, not images, so the usual image
//! transforms become: additive gaussian noise, temporal jitter (shift the
//! window content, repeating edge frames), and whole-feature dropout.

use super::ClipWindow;
use crate::error::{Error, Result};
use crate::numkit::seeded_rng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub noise_sigma: f64,
    /// Maximum |shift| in frames.
    pub temporal_jitter: usize,
    /// Probability of zeroing each feature column.
    pub dropout_rate: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            noise_sigma: 0.05,
            temporal_jitter: 2,
            dropout_rate: 0.1,
        }
    }
}

impl AugmentationConfig {
    pub const NONE: AugmentationConfig = AugmentationConfig {
        noise_sigma: 0.0,
        temporal_jitter: 0,
        dropout_rate: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!("bad noise sigma {}", self.noise_sigma)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Returns a perturbed copy of `clip`. Deterministic in `seed`; a zeroed
/// config is the identity. Draw order is fixed (shift, then noise, then
/// dropout) so outputs are stable across refactors.
pub fn augment(clip: &ClipWindow, aug: &AugmentationConfig, seed: u64) -> Result<ClipWindow> {
    aug.validate()?;
    let mut rng = seeded_rng(seed, "augment");
    let (l, d) = clip.frames.shape();
    let mut out = clip.clone();

    if aug.temporal_jitter > 0 {
        let j = aug.temporal_jitter as i64;
        let shift = rng.random_range(-j..=j);
        if shift != 0 {
            for i in 0..l {
                let src = (i as i64 + shift).clamp(0, l as i64 - 1) as usize;
                let row: Vec<f64> = clip.frames.row(src).to_vec();
                out.frames.data[i * d..(i + 1) * d].copy_from_slice(&row);
            }
        }
    }
    if aug.noise_sigma > 0.0 {
        for v in out.frames.data.iter_mut() {
            *v += aug.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    if aug.dropout_rate > 0.0 {
        for col in 0..d {
            if rng.random::<f64>() < aug.dropout_rate {
                for i in 0..l {
                    out.frames.data[i * d + col] = 0.0;
                }
            }
        }
    }
    Ok(out)
}
