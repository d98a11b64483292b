//! Denoising action head conditioned on plan context.
//!
//! The policy predicts short action chunks by iterative denoising: training
//! corrupts ground-truth chunks with Gaussian noise at a random depth of a
//! fixed schedule and regresses the injected noise; generation starts from
//! pure noise and walks the schedule backwards. Conditioning enters as plain
//! input concatenation — a state summary `s` and a plan-context vector `z`
//! are appended to the flattened noisy chunk along with a sinusoidal
//! embedding of the depth index.

mod model;
mod schedule;

pub use model::{train_policy, DiffusionPolicy, PolicySample};
pub use schedule::{forward_diffuse, NoiseSchedule};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Hyperparameters for the denoising policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Actions per predicted chunk.
    pub t_a: usize,
    /// Leading actions of each chunk the executor applies before replanning.
    pub apply_len: usize,
    /// Action dimensionality.
    pub action_dim: usize,
    /// Denoising steps in the schedule.
    pub horizon: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Hidden widths of the denoiser net.
    pub hidden_dims: Vec<usize>,
    /// Width of the sinusoidal embedding of the depth index.
    pub step_embed_dim: usize,
    /// Training iterations.
    pub steps: usize,
    pub lr: f64,
    /// Chunks per training batch.
    pub batch: usize,
    /// Synthetic-correction copies added per supervised chunk: the state's
    /// integrated position is jittered and the chunk is shifted to steer
    /// back onto the demonstrated path. Closed-loop execution only sees
    /// off-path states through these.
    pub aug_copies: usize,
    /// Position jitter scale of the correction copies.
    pub aug_pos_sigma: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            t_a: 4,
            apply_len: 2,
            action_dim: 2,
            horizon: 50,
            beta_start: 1e-4,
            beta_end: 0.2,
            hidden_dims: vec![128, 128],
            step_embed_dim: 16,
            steps: 6000,
            lr: 1e-3,
            batch: 48,
            aug_copies: 4,
            aug_pos_sigma: 0.1,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_a < 1 {
            return Err(Error::InvalidArgument("t_a must be at least 1".into()));
        }
        if self.apply_len < 1 || self.apply_len > self.t_a {
            return Err(Error::InvalidArgument(format!(
                "apply_len must lie in 1..={}, got {}",
                self.t_a, self.apply_len
            )));
        }
        if self.action_dim < 1 {
            return Err(Error::InvalidArgument("action_dim must be at least 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if !(self.beta_start > 0.0 && self.beta_end < 1.0 && self.beta_start <= self.beta_end) {
            return Err(Error::InvalidArgument(format!(
                "betas must satisfy 0 < start <= end < 1, got {}..{}",
                self.beta_start, self.beta_end
            )));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(
                "hidden_dims must be non-empty with positive widths".into(),
            ));
        }
        if self.step_embed_dim < 2 || self.step_embed_dim % 2 != 0 {
            return Err(Error::InvalidArgument(
                "step_embed_dim must be even and at least 2".into(),
            ));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument("steps and batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.aug_pos_sigma >= 0.0 && self.aug_pos_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "aug_pos_sigma must be non-negative, got {}",
                self.aug_pos_sigma
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.horizon, self.beta_start, self.beta_end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        PolicyConfig::default().validate().unwrap();
    }

    #[test]
    fn validate_catches_each_field() {
        let ok = PolicyConfig::default();
        for bad in [
            PolicyConfig { t_a: 0, ..ok.clone() },
            PolicyConfig { apply_len: 0, ..ok.clone() },
            PolicyConfig { apply_len: 5, ..ok.clone() },
            PolicyConfig { action_dim: 0, ..ok.clone() },
            PolicyConfig { horizon: 0, ..ok.clone() },
            PolicyConfig { beta_start: 0.0, ..ok.clone() },
            PolicyConfig { beta_end: 1.0, ..ok.clone() },
            PolicyConfig { beta_start: 0.5, beta_end: 0.2, ..ok.clone() },
            PolicyConfig { hidden_dims: vec![], ..ok.clone() },
            PolicyConfig { hidden_dims: vec![8, 0], ..ok.clone() },
            PolicyConfig { step_embed_dim: 7, ..ok.clone() },
            PolicyConfig { steps: 0, ..ok.clone() },
            PolicyConfig { batch: 0, ..ok.clone() },
            PolicyConfig { lr: 0.0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let r: std::result::Result<PolicyConfig, _> =
            serde_json::from_str(r#"{"t_a": 4, "flux": 1}"#);
        assert!(r.is_err());
    }
}
