//! Per-variant training: prototype discovery, alignment projections, and
//! the action policy, bundled as loadable artifacts.

use super::{Dataset, RunConfig, Variant};
use crate::align::{extract_plan, train_sam, PrototypePlan, SamParams};
use crate::encoder::{subsample_indices, EncoderConfig, SkillEncoder};
use crate::error::{Error, Result};
use crate::numkit::{seeded_rng, Checkpoint, Tensor};
use crate::policy::{train_policy, DiffusionPolicy, PolicyConfig, PolicySample};
use crate::protodisc::{select_k, train_prototypes, ProtoConfig, PrototypeBank, SelectionTrace};
use crate::simgen::DemoEpisode;
use rand::Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// Everything one (variant, seed) cell trains, plus what evaluation needs
/// to condition and assign.
pub struct Artifacts {
    pub variant: Variant,
    pub seed: u64,
    pub k_star: usize,
    /// Prototype config as actually trained (variant overrides applied,
    /// `k` pinned to `k_star`).
    pub proto_cfg: ProtoConfig,
    pub encoder: SkillEncoder,
    pub bank: PrototypeBank,
    pub sam: Option<SamParams>,
    pub policy: DiffusionPolicy,
    pub selection: Option<SelectionTrace>,
}

/// Original-frame index where each clip window ends, given an episode of
/// `t` frames. Clip content is resampled, so clip boundaries must be
/// mapped back through the resampling grid.
pub fn clip_end_frames(t: usize, cfg: &EncoderConfig) -> Vec<usize> {
    let idx = subsample_indices(t, cfg.m);
    let mut out = Vec::new();
    let mut start = 0;
    while start + cfg.l <= cfg.m {
        out.push(idx[start + cfg.l - 1]);
        start += cfg.stride;
    }
    out
}

/// Clip whose end lies nearest to frame `t` (ties resolve earlier).
pub fn clip_for_frame(ends: &[usize], t: usize) -> usize {
    let mut best = 0;
    let mut best_d = usize::MAX;
    for (i, &e) in ends.iter().enumerate() {
        let d = e.abs_diff(t);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Integrated positions before each frame: row `t` is the position after
/// applying actions `0..t`.
fn positions_before(actions: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(actions.rows, 2);
    let (mut x, mut y) = (0.0, 0.0);
    for t in 0..actions.rows {
        *out.at_mut(t, 0) = x;
        *out.at_mut(t, 1) = y;
        x += actions.at(t, 0);
        y += actions.at(t, 1);
    }
    out
}

fn state_row(pos: &[f64; 2], frame: &[f64]) -> Tensor {
    let mut data = Vec::with_capacity(2 + frame.len());
    data.push(pos[0]);
    data.push(pos[1]);
    data.extend_from_slice(frame);
    Tensor::from_vec(1, 2 + frame.len(), data).expect("state row")
}

/// Supervised chunks from one robot episode. `cond_per_frame` yields the
/// conditioning row for a control step. Besides the exact demo pairs,
/// each step emits `aug_copies` corrections: position jittered off the
/// path, chunk shifted to steer back by the chunk's end.
fn episode_samples(
    episode: &DemoEpisode,
    cfg: &PolicyConfig,
    cond_per_frame: impl Fn(usize) -> Tensor,
) -> Result<Vec<PolicySample>> {
    let t_a = cfg.t_a;
    let actions = episode
        .actions
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("{}: no actions", episode.task_id)))?;
    let pos = positions_before(actions);
    let mut rng = seeded_rng(
        episode.seed,
        &format!("policy-aug:{}:{}", episode.task_id, episode.speed),
    );
    let mut out = Vec::new();
    let t_total = actions.rows;
    if t_total < t_a {
        return Ok(out);
    }
    for t in 0..=t_total - t_a {
        let mut chunk = Tensor::zeros(t_a, actions.cols);
        for i in 0..t_a {
            for j in 0..actions.cols {
                *chunk.at_mut(i, j) = actions.at(t + i, j);
            }
        }
        let cond = cond_per_frame(t);
        out.push(PolicySample {
            state: state_row(&[pos.at(t, 0), pos.at(t, 1)], episode.frames.row(t)),
            cond: cond.clone(),
            chunk: chunk.clone(),
        });
        for _ in 0..cfg.aug_copies {
            let dx = cfg.aug_pos_sigma * rng.sample::<f64, _>(StandardNormal);
            let dy = cfg.aug_pos_sigma * rng.sample::<f64, _>(StandardNormal);
            let mut fixed = chunk.clone();
            // Steer back within the applied prefix so the offset is gone
            // by the next replan; later rows stay nominal.
            let lead = cfg.apply_len.min(t_a);
            for i in 0..lead {
                *fixed.at_mut(i, 0) -= dx / lead as f64;
                *fixed.at_mut(i, 1) -= dy / lead as f64;
            }
            out.push(PolicySample {
                state: state_row(
                    &[pos.at(t, 0) + dx, pos.at(t, 1) + dy],
                    episode.frames.row(t),
                ),
                cond: cond.clone(),
                chunk: fixed,
            });
        }
    }
    Ok(out)
}

/// Plan-conditioned samples: each control step is conditioned on the
/// `[embedding | assignment]` row of the clip ending nearest to it.
fn plan_conditioned_samples(
    episode: &DemoEpisode,
    plan: &PrototypePlan,
    enc_cfg: &EncoderConfig,
    cfg: &PolicyConfig,
) -> Result<Vec<PolicySample>> {
    let ends = clip_end_frames(episode.len(), enc_cfg);
    if ends.len() != plan.len() {
        return Err(Error::InvalidArgument(format!(
            "{}: {} clips but plan of {}",
            episode.task_id,
            ends.len(),
            plan.len()
        )));
    }
    let cond = plan.cond_matrix();
    episode_samples(episode, cfg, |t| {
        let i = clip_for_frame(&ends, t);
        Tensor::from_vec(1, cond.cols, cond.row(i).to_vec()).expect("cond row")
    })
}

/// Goal-conditioned samples: every step of the episode is conditioned on
/// the final observation frame of its human twin at the training tempo.
fn goal_conditioned_samples(
    episode: &DemoEpisode,
    twin: &DemoEpisode,
    cfg: &PolicyConfig,
) -> Result<Vec<PolicySample>> {
    let goal = twin.frames.row(twin.len() - 1).to_vec();
    let goal = Tensor::from_vec(1, goal.len(), goal)?;
    episode_samples(episode, cfg, |_| goal.clone())
}

/// Trains one (variant, seed) cell end to end on the dataset.
pub fn train_variant(
    ds: &Dataset,
    cfg: &RunConfig,
    variant: Variant,
    seed: u64,
) -> Result<Artifacts> {
    cfg.validate()?;
    let mut proto_cfg = variant.adjust_proto(&cfg.proto);
    let proto_set = ds.proto_training_set();
    if proto_set.is_empty() {
        return Err(Error::InvalidArgument("no training episodes at x1.0".into()));
    }

    let (k_star, selection) = if variant.selects_k() {
        let trace = select_k(&proto_set, &proto_cfg, &cfg.encoder, seed)?;
        (trace.chosen, Some(trace))
    } else {
        (proto_cfg.k_max, None)
    };
    proto_cfg.k = k_star;

    let (encoder, bank, _log) = train_prototypes(&proto_set, &proto_cfg, &cfg.encoder, seed)?;

    let robot_eps = ds.robot_training_set();
    if robot_eps.is_empty() {
        return Err(Error::InvalidArgument("no robot training episodes at x1.0".into()));
    }

    let mut samples = Vec::new();
    let mut plans = Vec::new();
    if variant.is_goal_conditioned() {
        for ep in &robot_eps {
            let twin = ds.human_twin(ep).ok_or_else(|| {
                Error::InvalidArgument(format!("{}: no human twin for goal", ep.task_id))
            })?;
            samples.extend(goal_conditioned_samples(ep, twin, &cfg.policy)?);
        }
    } else {
        for ep in &robot_eps {
            let plan = extract_plan(&encoder, &bank, &proto_cfg, ep)?;
            samples.extend(plan_conditioned_samples(ep, &plan, &cfg.encoder, &cfg.policy)?);
            plans.push(plan);
        }
    }

    let sam = if variant.uses_sam() {
        let (sam, _) = train_sam(&plans, &cfg.align, seed)?;
        Some(sam)
    } else {
        None
    };

    let (policy, _) = train_policy(&samples, &cfg.policy, seed)?;

    Ok(Artifacts {
        variant,
        seed,
        k_star,
        proto_cfg,
        encoder,
        bank,
        sam,
        policy,
        selection,
    })
}

impl Artifacts {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let meta = serde_json::json!({
            "variant": self.variant,
            "seed": self.seed,
            "k_star": self.k_star,
            "proto_cfg": self.proto_cfg,
        });
        let text = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::Checkpoint(format!("artifacts meta: {e}")))?;
        std::fs::write(dir.join("artifacts.json"), text)
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
        self.encoder.to_checkpoint()?.save(&dir.join("encoder.ck"))?;
        self.bank
            .to_checkpoint(self.proto_cfg.tau)?
            .save(&dir.join("bank.ck"))?;
        self.policy.to_checkpoint()?.save(&dir.join("policy.ck"))?;
        if let Some(sam) = &self.sam {
            sam.to_checkpoint()?.save(&dir.join("sam.ck"))?;
        }
        if let Some(sel) = &self.selection {
            sel.write_csv(&dir.join("k_selection.csv"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Artifacts> {
        let meta_path = dir.join("artifacts.json");
        let text = std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
        let meta: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("artifacts meta: {e}")))?;
        let variant: Variant = serde_json::from_value(meta["variant"].clone())
            .map_err(|e| Error::Checkpoint(format!("artifacts variant: {e}")))?;
        let proto_cfg: ProtoConfig = serde_json::from_value(meta["proto_cfg"].clone())
            .map_err(|e| Error::Checkpoint(format!("artifacts proto_cfg: {e}")))?;
        let seed = meta["seed"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("artifacts seed".into()))?;
        let k_star = meta["k_star"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("artifacts k_star".into()))?
            as usize;

        let encoder =
            SkillEncoder::from_checkpoint(&Checkpoint::load(&dir.join("encoder.ck"))?)?;
        let (bank, _tau) = PrototypeBank::from_checkpoint(&Checkpoint::load(&dir.join("bank.ck"))?)?;
        let policy =
            DiffusionPolicy::from_checkpoint(&Checkpoint::load(&dir.join("policy.ck"))?)?;
        let sam_path = dir.join("sam.ck");
        let sam = if sam_path.exists() {
            Some(SamParams::from_checkpoint(&Checkpoint::load(&sam_path)?)?)
        } else {
            None
        };
        Ok(Artifacts {
            variant,
            seed,
            k_star,
            proto_cfg,
            encoder,
            bank,
            sam,
            policy,
            selection: None,
        })
    }
}
