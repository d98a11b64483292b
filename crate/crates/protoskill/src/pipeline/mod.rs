//! End-to-end experiment plumbing: dataset files, per-variant training,
//! one-shot evaluation, and report emission.

mod data;
mod eval;
mod train;

pub use data::{gen_data, heldout_scripts, load_dataset, train_scripts, Dataset, PromptSet};
pub use eval::{
    aggregate, eval_matrix, eval_oneshot, export_embeddings, write_report, EpisodeEval, EvalCell,
    ReportRow,
};
pub use train::{train_variant, Artifacts};

use crate::align::AlignConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::policy::PolicyConfig;
use crate::protodisc::ProtoConfig;
use crate::simgen::{SimgenConfig, TaskCategory};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Dataset shape: which scripts exist and how often each is rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// World seed; everything about the world derives from it.
    pub world_seed: u64,
    pub categories: Vec<TaskCategory>,
    /// Training scripts per category.
    pub train_scripts: usize,
    /// Held-out scripts per category, disjoint from training scripts.
    pub heldout_scripts: usize,
    /// Playback speeds rendered into the dataset files.
    pub speeds: Vec<f64>,
    /// Noise renders per (script, speed).
    pub renders: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            world_seed: 42,
            categories: TaskCategory::ALL.to_vec(),
            train_scripts: 6,
            heldout_scripts: 20,
            speeds: vec![1.0, 2.0],
            renders: 3,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::InvalidArgument("data: no categories".into()));
        }
        if self.train_scripts == 0 || self.heldout_scripts == 0 || self.renders == 0 {
            return Err(Error::InvalidArgument(
                "data: script and render counts must be positive".into(),
            ));
        }
        if self.speeds.is_empty() || self.speeds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("data: speeds must be positive".into()));
        }
        if !self.speeds.contains(&1.0) {
            return Err(Error::InvalidArgument(
                "data: speeds must include 1.0 (training tempo)".into(),
            ));
        }
        Ok(())
    }
}

/// Evaluation matrix shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Training/evaluation seeds; each gets its own artifacts.
    pub seeds: Vec<u64>,
    /// Prompt playback speeds to evaluate.
    pub speeds: Vec<f64>,
    /// Control-step budget as a multiple of the nominal episode length.
    pub step_cap_factor: f64,
    /// Chunks drawn per control step; the executed chunk is their mean.
    pub samples_per_chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seeds: vec![0, 1, 2, 3, 4],
            speeds: vec![1.0, 2.0],
            step_cap_factor: 1.5,
            samples_per_chunk: 3,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("eval: no seeds".into()));
        }
        if self.speeds.is_empty() || self.speeds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("eval: speeds must be positive".into()));
        }
        if !(self.step_cap_factor >= 1.0 && self.step_cap_factor.is_finite()) {
            return Err(Error::InvalidArgument(
                "eval: step_cap_factor must be at least 1".into(),
            ));
        }
        if self.samples_per_chunk == 0 {
            return Err(Error::InvalidArgument(
                "eval: samples_per_chunk must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Whole-experiment configuration; the TOML file mirrors this exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub simgen: SimgenConfig,
    pub encoder: EncoderConfig,
    pub proto: ProtoConfig,
    pub policy: PolicyConfig,
    pub align: AlignConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.proto.validate()?;
        self.policy.validate()?;
        self.align.validate()?;
        self.data.validate()?;
        self.eval.validate()?;
        if self.policy.action_dim != crate::simgen::ACTION_DIM {
            return Err(Error::InvalidArgument(format!(
                "policy.action_dim must be {}, got {}",
                crate::simgen::ACTION_DIM,
                self.policy.action_dim
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        RunConfig::from_toml_str(&text)
    }

    /// Short hash over the canonical serialized config; stamped into every
    /// report row so numbers trace back to their inputs.
    pub fn hash(&self) -> String {
        let canon = toml::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Pipeline variants: the full method plus its ablations and the
/// goal-conditioned baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    SinkhornAssign,
    FixedK,
    NoAlign,
    NoTemporal,
    GcdBaseline,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::SinkhornAssign,
        Variant::FixedK,
        Variant::NoAlign,
        Variant::NoTemporal,
        Variant::GcdBaseline,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SinkhornAssign => "sinkhorn-assign",
            Variant::FixedK => "fixed-k",
            Variant::NoAlign => "no-align",
            Variant::NoTemporal => "no-temporal",
            Variant::GcdBaseline => "gcd-baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        let lower = s.to_ascii_lowercase();
        Variant::ALL
            .iter()
            .find(|v| v.name() == lower)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown variant '{s}'; expected one of: {}",
                    names.join(", ")
                ))
            })
    }

    /// Applies this variant's training-time overrides.
    pub fn adjust_proto(&self, cfg: &ProtoConfig) -> ProtoConfig {
        let mut out = cfg.clone();
        match self {
            Variant::SinkhornAssign => out.sinkhorn_assign = true,
            Variant::NoTemporal => out.lambda_temporal = 0.0,
            _ => {}
        }
        out
    }

    /// Whether prototype count comes from the entropy sweep (vs pinned at
    /// the grid maximum).
    pub fn selects_k(&self) -> bool {
        !matches!(self, Variant::FixedK)
    }

    pub fn uses_sam(&self) -> bool {
        !matches!(self, Variant::NoAlign | Variant::GcdBaseline)
    }

    pub fn is_goal_conditioned(&self) -> bool {
        matches!(self, Variant::GcdBaseline)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_rejected_at_any_level() {
        assert!(RunConfig::from_toml_str("[simgen]\nwarp = 3\n").is_err());
        assert!(RunConfig::from_toml_str("[nonsense]\nx = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[proto]\nk = 16\n").is_ok());
    }

    #[test]
    fn hash_changes_with_any_field() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.proto.tau = 0.2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn variant_names_round_trip_and_unknown_rejected() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert_eq!(Variant::parse("Fixed-K").unwrap(), Variant::FixedK);
        let err = Variant::parse("tcn").unwrap_err().to_string();
        assert!(err.contains("gcd-baseline") && err.contains("sinkhorn-assign"), "{err}");
    }

    #[test]
    fn variant_overrides() {
        let base = ProtoConfig::default();
        assert!(Variant::SinkhornAssign.adjust_proto(&base).sinkhorn_assign);
        assert_eq!(Variant::NoTemporal.adjust_proto(&base).lambda_temporal, 0.0);
        assert_eq!(Variant::Full.adjust_proto(&base), base);
        assert!(!Variant::FixedK.selects_k());
        assert!(!Variant::NoAlign.uses_sam());
        assert!(Variant::GcdBaseline.is_goal_conditioned());
    }

    #[test]
    fn speeds_must_include_training_tempo() {
        let mut cfg = RunConfig::default();
        cfg.data.speeds = vec![2.0];
        assert!(cfg.validate().is_err());
    }
}
