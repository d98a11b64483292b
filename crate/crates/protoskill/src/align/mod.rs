//! Plan extraction and monotone attention over the plan.
//!
//! A prompt demonstration is distilled into a sequence of per-clip
//! embeddings and prototype assignments — the plan. During execution the
//! robot's recent observation window is matched against the plan by
//! attention; a soft monotonicity prior keeps the matched position from
//! running ahead, and a hard mask forbids sliding far backwards. The
//! attention-weighted plan row becomes the conditioning vector for the
//! action head, so execution speed may differ freely from the prompt.

mod sam;

pub use sam::{align_step, train_sam, write_align_trace, AlignState, SamParams};

use crate::encoder::{make_clips, SkillEncoder};
use crate::error::{Error, Result};
use crate::protodisc::{assign, ProtoConfig, PrototypeBank};
use crate::simgen::DemoEpisode;
use crate::numkit::Tensor;
use serde::{Deserialize, Serialize};

/// Alignment hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    /// Quadratic penalty strength on attending ahead of current progress.
    pub gamma: f64,
    /// Clips of slack in both directions: positions more than `window`
    /// ahead are softly penalized, more than `window` behind hard-masked.
    pub window: usize,
    /// Skip the learned projections and attend by raw cosine similarity.
    pub parameter_free: bool,
    /// Temperature for the parameter-free cosine scores.
    pub cosine_tau: f64,
    /// Replay-training iterations.
    pub steps: usize,
    pub lr: f64,
    /// (plan, index) pairs per training batch.
    pub batch: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            gamma: 0.5,
            window: 3,
            parameter_free: false,
            cosine_tau: 0.1,
            steps: 300,
            lr: 3e-3,
            batch: 32,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        if self.window == 0 {
            return Err(Error::InvalidArgument("window must be at least 1 clip".into()));
        }
        if !(self.cosine_tau > 0.0 && self.cosine_tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cosine_tau must be positive, got {}",
                self.cosine_tau
            )));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument("steps and batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// A prompt demonstration reduced to per-clip embeddings and prototype
/// assignments, in clip order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypePlan {
    /// `T_p x d`, unit rows.
    pub embeddings: Tensor,
    /// `T_p x K`, rows sum to 1.
    pub assignments: Tensor,
    /// Episode id the plan came from.
    pub source: String,
}

impl PrototypePlan {
    pub fn validate(&self) -> Result<()> {
        if self.embeddings.rows == 0 {
            return Err(Error::InvalidArgument("plan has no clips".into()));
        }
        if self.embeddings.rows != self.assignments.rows {
            return Err(Error::shape(
                "plan rows",
                format!("{}", self.embeddings.rows),
                format!("{}", self.assignments.rows),
            ));
        }
        for i in 0..self.assignments.rows {
            let s: f64 = self.assignments.row(i).iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "plan assignment row {i} sums to {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows == 0
    }

    /// Width of one conditioning row, embedding plus assignment.
    pub fn cond_width(&self) -> usize {
        self.embeddings.cols + self.assignments.cols
    }

    /// `T_p x (d + K)`: each row is `[embedding | assignment]`.
    pub fn cond_matrix(&self) -> Tensor {
        let mut out = Tensor::zeros(self.len(), self.cond_width());
        for i in 0..self.len() {
            for j in 0..self.embeddings.cols {
                *out.at_mut(i, j) = self.embeddings.at(i, j);
            }
            for j in 0..self.assignments.cols {
                *out.at_mut(i, self.embeddings.cols + j) = self.assignments.at(i, j);
            }
        }
        out
    }

    /// One plan per line, same layout discipline as the episode files.
    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(format!("plan encode: {e}")))
    }

    pub fn from_json_line(line: &str) -> Result<PrototypePlan> {
        let plan: PrototypePlan = serde_json::from_str(line)
            .map_err(|e| Error::Checkpoint(format!("plan decode: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Runs the prompt through clip windowing, encoding, and prototype
/// assignment, preserving clip order.
pub fn extract_plan(
    enc: &SkillEncoder,
    bank: &PrototypeBank,
    proto_cfg: &ProtoConfig,
    prompt: &DemoEpisode,
) -> Result<PrototypePlan> {
    let clips = make_clips(prompt, &enc.cfg)?;
    let z = enc.encode_all(&clips)?;
    let s_raw = bank.project(&z)?;
    let q = assign(&s_raw, proto_cfg)?;
    let plan = PrototypePlan {
        embeddings: z,
        assignments: q,
        source: clips[0].episode.clone(),
    };
    plan.validate()?;
    Ok(plan)
}
