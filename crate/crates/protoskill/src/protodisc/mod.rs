//! Prototype discovery: a bank of unit directions in embedding space is
//! trained jointly with the encoder so that augmented views of the same
//! clip agree on their prototype assignment (swapped prediction) and
//! temporally adjacent clips stay close (InfoNCE). Prototype count is
//! chosen by sweeping K and watching where the usage-entropy curve stops
//! moving.

mod assign;
mod losses;
mod train;

pub use assign::{
    assignment_entropy, raw_usage_entropy, sinkhorn_assign, soft_assign, usage, PrototypeBank,
};
pub use losses::{proto_loss, proto_loss_tape, temporal_loss, temporal_loss_tape};
pub use train::{
    assign, dataset_assignments, select_k, train_prototypes, SelectionTrace, TraceEntry, TrainLog,
};

use crate::encoder::AugmentationConfig;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtoConfig {
    /// Prototype count for a full training run (overridden by select-k).
    pub k: usize,
    /// Assignment temperature.
    pub tau: f64,
    /// Entropy-change threshold for K selection; when unset, scales with
    /// the grid start: 0.01 * ln(k_min) / k_min.
    pub theta: Option<f64>,
    /// K-grid step.
    pub delta_k: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Weight of the temporal InfoNCE term.
    pub lambda_temporal: f64,
    /// Weight of the anti-collapse usage-entropy term; 0 disables it.
    pub lambda_ent: f64,
    /// Temporal-positive offset in clips.
    pub delta: usize,
    /// Temporal InfoNCE temperature.
    pub tau_tcn: f64,
    /// Swapped-prediction targets use temperature tau * this factor.
    /// Below 1 the targets are sharper than the predictions, which is
    /// what makes self-labeling sharpen instead of settling into the
    /// all-uniform fixed point; 1 recovers the symmetric form.
    pub target_tau_scale: f64,
    /// Replace softmax targets with Sinkhorn-balanced targets (and plan
    /// assignments downstream) — the exclusive-assignment baseline.
    pub sinkhorn_assign: bool,
    pub sinkhorn_iters: usize,
    /// Use unscaled usage entropy for the selection curve instead of the
    /// 1/K-normalized form.
    pub raw_entropy: bool,
    /// Full-training optimizer budget.
    pub steps: usize,
    pub lr: f64,
    /// Episodes drawn per optimizer step.
    pub batch_episodes: usize,
    /// Fraction of `steps` spent per grid point during K selection.
    pub prelim_frac: f64,
    /// Record usage entropy every this many steps.
    pub log_every: usize,
    pub augment: AugmentationConfig,
}

impl Default for ProtoConfig {
    fn default() -> Self {
        ProtoConfig {
            k: 32,
            tau: 0.1,
            theta: None,
            delta_k: 8,
            k_min: 8,
            k_max: 64,
            lambda_temporal: 0.5,
            lambda_ent: 0.01,
            delta: 1,
            tau_tcn: 0.1,
            target_tau_scale: 0.5,
            sinkhorn_assign: false,
            sinkhorn_iters: 10,
            raw_entropy: false,
            steps: 400,
            lr: 3e-3,
            batch_episodes: 4,
            prelim_frac: 0.2,
            log_every: 20,
            augment: AugmentationConfig::default(),
        }
    }
}

impl ProtoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("prototype count must be >= 1".into()));
        }
        for (name, v) in [("tau", self.tau), ("tau_tcn", self.tau_tcn)] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.delta_k < 1 {
            return Err(Error::Config("k-grid step must be >= 1".into()));
        }
        if self.k_min > self.k_max {
            return Err(Error::Config(format!(
                "k_min {} exceeds k_max {}",
                self.k_min, self.k_max
            )));
        }
        if self.delta < 1 {
            return Err(Error::Config("temporal offset must be >= 1".into()));
        }
        if self.lambda_temporal < 0.0 || self.lambda_ent < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.steps < 1 || self.batch_episodes < 1 {
            return Err(Error::Config("training budget must be positive".into()));
        }
        if !(self.prelim_frac > 0.0 && self.prelim_frac <= 1.0) {
            return Err(Error::Config(format!(
                "preliminary budget fraction must be in (0,1], got {}",
                self.prelim_frac
            )));
        }
        if self.sinkhorn_iters < 1 {
            return Err(Error::Config("sinkhorn needs at least one iteration".into()));
        }
        if !(self.target_tau_scale > 0.0 && self.target_tau_scale <= 1.0) {
            return Err(Error::Config(format!(
                "target temperature scale must be in (0,1], got {}",
                self.target_tau_scale
            )));
        }
        self.augment.validate()
    }

    /// Effective selection threshold.
    pub fn theta(&self) -> f64 {
        self.theta
            .unwrap_or_else(|| 0.01 * (self.k_min as f64).ln() / self.k_min as f64)
    }

    /// The K values visited during selection.
    pub fn k_grid(&self) -> Vec<usize> {
        let mut grid = Vec::new();
        let mut k = self.k_min;
        while k <= self.k_max {
            grid.push(k);
            k += self.delta_k;
        }
        grid
    }
}
