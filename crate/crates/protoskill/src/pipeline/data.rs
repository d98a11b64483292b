//! Dataset materialization: script sets, episode rendering, file layout.

use super::{DataConfig, RunConfig};
use crate::error::{Error, Result};
use crate::simgen::{io, make_task, render_episode, DemoEpisode, TaskScript, World};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

/// Script-seed offset separating held-out draws from training draws.
const HELDOUT_SEED_BASE: u64 = 10_000;

fn script_key(s: &TaskScript) -> Vec<usize> {
    s.primitives.clone()
}

/// Training scripts: per category, the first `train_scripts` distinct
/// primitive sequences in seed order.
pub fn train_scripts(world: &World, cfg: &DataConfig) -> Result<Vec<(String, TaskScript)>> {
    let mut out = Vec::new();
    for cat in &cfg.categories {
        let mut seen = HashSet::new();
        let mut seed = 0u64;
        let mut made = 0usize;
        while made < cfg.train_scripts {
            let script = make_task(world, *cat, seed)?;
            seed += 1;
            if seen.insert(script_key(&script)) {
                out.push((format!("{}-{made}", cat.name()), script));
                made += 1;
            }
            if seed > HELDOUT_SEED_BASE {
                return Err(Error::InvalidArgument(format!(
                    "could not draw {} distinct {} scripts",
                    cfg.train_scripts,
                    cat.name()
                )));
            }
        }
    }
    Ok(out)
}

/// Held-out scripts: drawn from a disjoint seed range and additionally
/// filtered against every training primitive sequence.
pub fn heldout_scripts(world: &World, cfg: &DataConfig) -> Result<Vec<(String, TaskScript)>> {
    let train = train_scripts(world, cfg)?;
    let mut taken: HashSet<Vec<usize>> = train.iter().map(|(_, s)| script_key(s)).collect();
    let mut out = Vec::new();
    for cat in &cfg.categories {
        let mut seed = HELDOUT_SEED_BASE;
        let mut made = 0usize;
        while made < cfg.heldout_scripts {
            let script = make_task(world, *cat, seed)?;
            seed += 1;
            if taken.insert(script_key(&script)) {
                out.push((format!("ho-{}-{made}", cat.name()), script));
                made += 1;
            }
            if seed > 2 * HELDOUT_SEED_BASE {
                return Err(Error::InvalidArgument(format!(
                    "could not draw {} distinct held-out {} scripts",
                    cfg.heldout_scripts,
                    cat.name()
                )));
            }
        }
    }
    Ok(out)
}

fn render_set(
    world: &World,
    scripts: &[(String, TaskScript)],
    embodiment: &str,
    cfg: &DataConfig,
) -> Result<Vec<DemoEpisode>> {
    let mut out = Vec::new();
    for (task_id, script) in scripts {
        for &speed in &cfg.speeds {
            for r in 0..cfg.renders {
                out.push(render_episode(world, task_id, script, embodiment, speed, r as u64)?);
            }
        }
    }
    Ok(out)
}

pub fn dataset_file(out_dir: &Path, split: &str, embodiment: &str) -> PathBuf {
    out_dir.join("data").join(format!("{split}_{embodiment}.jsonl"))
}

/// Renders the full episode matrix to four JSONL files and returns
/// `(train, heldout)` episode counts per embodiment.
pub fn gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<(usize, usize)> {
    cfg.validate()?;
    let world = World::generate(&cfg.simgen, cfg.data.world_seed)?;
    let train = train_scripts(&world, &cfg.data)?;
    let heldout = heldout_scripts(&world, &cfg.data)?;

    let mut counts = (0, 0);
    for embodiment in ["human", "robot"] {
        let train_eps = render_set(&world, &train, embodiment, &cfg.data)?;
        let held_eps = render_set(&world, &heldout, embodiment, &cfg.data)?;
        counts = (train_eps.len(), held_eps.len());
        io::write_episodes(&dataset_file(out_dir, "train", embodiment), &train_eps)?;
        io::write_episodes(&dataset_file(out_dir, "heldout", embodiment), &held_eps)?;
    }
    Ok(counts)
}

/// Everything training and evaluation read from disk.
#[derive(Debug)]
pub struct Dataset {
    pub train_human: Vec<DemoEpisode>,
    pub train_robot: Vec<DemoEpisode>,
    pub heldout_human: Vec<DemoEpisode>,
    pub heldout_robot: Vec<DemoEpisode>,
}

impl Dataset {
    /// Training episodes at the training tempo, both embodiments; the
    /// encoder and prototype bank see this mix.
    pub fn proto_training_set(&self) -> Vec<DemoEpisode> {
        self.train_human
            .iter()
            .chain(self.train_robot.iter())
            .filter(|e| e.speed == 1.0)
            .cloned()
            .collect()
    }

    /// Robot training episodes at the training tempo; the policy and the
    /// alignment projections see only these.
    pub fn robot_training_set(&self) -> Vec<&DemoEpisode> {
        self.train_robot.iter().filter(|e| e.speed == 1.0).collect()
    }

    /// The human twin of a robot training episode: same script, same
    /// render seed, training tempo.
    pub fn human_twin(&self, robot: &DemoEpisode) -> Option<&DemoEpisode> {
        self.train_human
            .iter()
            .find(|h| h.task_id == robot.task_id && h.seed == robot.seed && h.speed == 1.0)
    }

    /// Held-out prompts for one embodiment, speed, and render index.
    pub fn prompts(&self, embodiment: &str, speed: f64, render: u64) -> PromptSet<'_> {
        let pool = if embodiment == "human" {
            &self.heldout_human
        } else {
            &self.heldout_robot
        };
        PromptSet {
            episodes: pool
                .iter()
                .filter(|e| e.speed == speed && e.seed == render)
                .collect(),
        }
    }
}

/// Borrowed view of one evaluation cell's prompt episodes.
#[derive(Debug)]
pub struct PromptSet<'a> {
    pub episodes: Vec<&'a DemoEpisode>,
}

pub fn load_dataset(out_dir: &Path) -> Result<Dataset> {
    Ok(Dataset {
        train_human: io::read_episodes(&dataset_file(out_dir, "train", "human"))?,
        train_robot: io::read_episodes(&dataset_file(out_dir, "train", "robot"))?,
        heldout_human: io::read_episodes(&dataset_file(out_dir, "heldout", "human"))?,
        heldout_robot: io::read_episodes(&dataset_file(out_dir, "heldout", "robot"))?,
    })
}
