//! One-shot execution of held-out prompts and report assembly.

use super::{Artifacts, Dataset, RunConfig, Variant};
use crate::align::{align_step, extract_plan, AlignState, PrototypePlan};
use crate::encoder::{make_clips, trailing_window};
use crate::error::{Error, Result};
use crate::numkit::{seeded_rng, Tensor};
use crate::simgen::{render_episode, success_check, DemoEpisode, TaskCategory, World};
use rand::Rng;
use std::io::Write;
use std::path::Path;

/// Render-seed base for on-the-fly robot observation streams; keeps them
/// disjoint from every dataset render.
const OBS_RENDER_BASE: u64 = 5_000;

/// Outcome of executing one prompt.
#[derive(Debug)]
pub struct EpisodeEval {
    pub task_id: String,
    pub success: bool,
    pub steps: usize,
    pub plan_len: usize,
    /// Alignment trajectory, one state per replanning point; empty for
    /// variants that bypass attention.
    pub states: Vec<AlignState>,
    /// Executed action rows, for success auditing.
    pub actions: Tensor,
}

impl EpisodeEval {
    /// Final soft plan index, if this variant tracked one.
    pub fn final_position(&self) -> Option<f64> {
        self.states.last().map(|s| s.position)
    }
}

/// Conditioning source resolved once per episode.
enum CondSource {
    Sam(PrototypePlan),
    TimeIndexed { plan: PrototypePlan, prompt_frames: usize, m: usize, l: usize, stride: usize },
    Goal(Tensor),
}

/// Fixed-rate readout: assume the robot timeline matches the prompt frame
/// timeline one-to-one and read the clip whose window ends at that frame.
/// Prompts played faster than the training tempo exhaust the plan early —
/// the cost of skipping alignment.
fn time_indexed_clip(t: usize, prompt_frames: usize, m: usize, l: usize, stride: usize, plan_len: usize) -> usize {
    let frame = t.min(prompt_frames - 1) as f64;
    let j = if prompt_frames > 1 {
        (frame * (m as f64 - 1.0) / (prompt_frames as f64 - 1.0)).round()
    } else {
        0.0
    };
    let i = ((j - (l as f64 - 1.0)) / stride as f64).round().max(0.0) as usize;
    i.min(plan_len - 1)
}

/// Executes one prompt: condition, sample action chunks, integrate, and
/// check the path against the script's waypoints.
pub fn eval_oneshot(
    art: &Artifacts,
    prompt: &DemoEpisode,
    world: &World,
    cfg: &RunConfig,
    eval_seed: u64,
) -> Result<EpisodeEval> {
    // The robot re-experiences the task at its own tempo with fresh noise;
    // only observations are taken from this stream, never actions.
    let obs = render_episode(
        world,
        &prompt.task_id,
        &prompt.script,
        "robot",
        1.0,
        OBS_RENDER_BASE + eval_seed,
    )?;
    let t_nominal = obs.len();
    let cap = (cfg.eval.step_cap_factor * t_nominal as f64).ceil() as usize;
    let l = cfg.encoder.l;

    let source = match art.variant {
        Variant::GcdBaseline => {
            let g = prompt.frames.row(prompt.len() - 1).to_vec();
            CondSource::Goal(Tensor::from_vec(1, g.len(), g)?)
        }
        Variant::NoAlign => CondSource::TimeIndexed {
            plan: extract_plan(&art.encoder, &art.bank, &art.proto_cfg, prompt)?,
            prompt_frames: prompt.len(),
            m: cfg.encoder.m,
            l,
            stride: cfg.encoder.stride,
        },
        _ => CondSource::Sam(extract_plan(&art.encoder, &art.bank, &art.proto_cfg, prompt)?),
    };
    let plan_len = match &source {
        CondSource::Sam(p) | CondSource::TimeIndexed { plan: p, .. } => p.len(),
        CondSource::Goal(_) => 0,
    };

    let mut exec_rng = seeded_rng(
        eval_seed,
        &format!(
            "exec:{}:{}:x{}:r{}",
            art.variant, prompt.task_id, prompt.speed, prompt.seed
        ),
    );

    let mut align_state = AlignState::new();
    let mut states = Vec::new();
    let mut actions: Vec<f64> = Vec::with_capacity(cap * 2);
    let (mut x, mut y) = (0.0, 0.0);
    let mut t = 0usize;

    while t < cap {
        let obs_idx = t.min(t_nominal - 1);
        let window = trailing_window(&obs.frames, obs_idx, l)?;
        let cond = match &source {
            CondSource::Sam(plan) => {
                let sam = art.sam.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("variant needs alignment projections".into())
                })?;
                let (z_hat, next) =
                    align_step(plan, &window, &align_state, &art.encoder, sam, &cfg.align)?;
                align_state = next;
                states.push(align_state.clone());
                z_hat
            }
            CondSource::TimeIndexed { plan, prompt_frames, m, l, stride } => {
                let i = time_indexed_clip(t, *prompt_frames, *m, *l, *stride, plan.len());
                let c = plan.cond_matrix();
                Tensor::from_vec(1, c.cols, c.row(i).to_vec())?
            }
            CondSource::Goal(g) => g.clone(),
        };
        let state = {
            let frame = obs.frames.row(obs_idx);
            let mut data = Vec::with_capacity(2 + frame.len());
            data.push(x);
            data.push(y);
            data.extend_from_slice(frame);
            Tensor::from_vec(1, 2 + frame.len(), data)?
        };
        // Averaging a few draws trims sampling jitter; the demo action
        // field is unimodal per state, so the mean is safe to execute.
        let mut chunk = art.policy.sample_action(&state, &cond, exec_rng.random())?;
        for _ in 1..cfg.eval.samples_per_chunk {
            chunk = chunk.add(&art.policy.sample_action(&state, &cond, exec_rng.random())?)?;
        }
        let chunk = chunk.scale(1.0 / cfg.eval.samples_per_chunk as f64);
        let apply = cfg.policy.apply_len.min(cap - t);
        for i in 0..apply {
            x += chunk.at(i, 0);
            y += chunk.at(i, 1);
            actions.push(chunk.at(i, 0));
            actions.push(chunk.at(i, 1));
        }
        t += apply;
    }

    let actions = Tensor::from_vec(t, 2, actions)?;
    let report = success_check(world, &actions, &prompt.script)?;
    Ok(EpisodeEval {
        task_id: prompt.task_id.clone(),
        success: report.success,
        steps: t,
        plan_len,
        states,
        actions,
    })
}

/// One evaluation cell: success rate of one (condition, speed, category)
/// under one seed's artifacts.
#[derive(Debug, Clone)]
pub struct EvalCell {
    pub variant: Variant,
    pub condition: &'static str,
    pub speed: f64,
    pub category: TaskCategory,
    pub seed: u64,
    pub episodes: usize,
    pub successes: usize,
}

impl EvalCell {
    pub fn rate(&self) -> f64 {
        100.0 * self.successes as f64 / self.episodes as f64
    }
}

/// Runs the full prompt matrix for one seed's artifacts: both embodiment
/// conditions, every eval speed, every category.
pub fn eval_matrix(
    art: &Artifacts,
    ds: &Dataset,
    world: &World,
    cfg: &RunConfig,
) -> Result<Vec<EvalCell>> {
    let mut cells = Vec::new();
    let render = art.seed % cfg.data.renders as u64;
    for (condition, embodiment) in [("cross", "human"), ("same", "robot")] {
        for &speed in &cfg.eval.speeds {
            let prompts = ds.prompts(embodiment, speed, render);
            if prompts.episodes.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "no held-out {embodiment} prompts at x{speed} render {render}"
                )));
            }
            for &category in &cfg.data.categories {
                let mut cell = EvalCell {
                    variant: art.variant,
                    condition,
                    speed,
                    category,
                    seed: art.seed,
                    episodes: 0,
                    successes: 0,
                };
                for prompt in prompts
                    .episodes
                    .iter()
                    .filter(|e| e.script.complexity == category)
                {
                    let run = eval_oneshot(art, prompt, world, cfg, art.seed)?;
                    cell.episodes += 1;
                    cell.successes += run.success as usize;
                }
                if cell.episodes > 0 {
                    cells.push(cell);
                }
            }
        }
    }
    Ok(cells)
}

/// One aggregated report line: a (variant, condition, speed, category)
/// cell averaged over seeds.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub variant: Variant,
    pub condition: String,
    pub speed: f64,
    pub category: TaskCategory,
    pub success_mean: f64,
    pub success_stderr: f64,
    pub seeds: usize,
    pub config_hash: String,
}

/// Groups per-seed cells into report rows, preserving first-seen order.
pub fn aggregate(cells: &[EvalCell], config_hash: &str) -> Vec<ReportRow> {
    let mut order: Vec<(Variant, &'static str, f64, TaskCategory)> = Vec::new();
    for c in cells {
        let key = (c.variant, c.condition, c.speed, c.category);
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(variant, condition, speed, category)| {
            let rates: Vec<f64> = cells
                .iter()
                .filter(|c| {
                    c.variant == variant
                        && c.condition == condition
                        && c.speed == speed
                        && c.category == category
                })
                .map(|c| c.rate())
                .collect();
            let n = rates.len() as f64;
            let mean = rates.iter().sum::<f64>() / n;
            let var = rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
            ReportRow {
                variant,
                condition: condition.to_string(),
                speed,
                category,
                success_mean: mean,
                success_stderr: (var / n).sqrt(),
                seeds: rates.len(),
                config_hash: config_hash.to_string(),
            }
        })
        .collect()
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut out =
        String::from("variant,condition,speed,category,success_mean,success_stderr,seeds,config_hash\n");
    for r in rows {
        debug_assert!((0.0..=100.0).contains(&r.success_mean) && r.success_stderr >= 0.0);
        out.push_str(&format!(
            "{},{},{},{},{:.2},{:.2},{},{}\n",
            r.variant,
            r.condition,
            r.speed,
            r.category.name(),
            r.success_mean,
            r.success_stderr,
            r.seeds,
            r.config_hash
        ));
    }
    let mut f =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// One CSV row per clip of every given episode: identity columns, the
/// embedding, and the assignment row.
pub fn export_embeddings(
    art: &Artifacts,
    episodes: &[&DemoEpisode],
    cfg: &RunConfig,
    path: &Path,
) -> Result<usize> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut header = String::from("embodiment,category,task_id,clip");
    for j in 0..cfg.encoder.d {
        header.push_str(&format!(",e{j}"));
    }
    for j in 0..art.k_star {
        header.push_str(&format!(",q{j}"));
    }
    header.push('\n');
    let mut out = header;
    let mut rows = 0usize;
    for ep in episodes {
        let clips = make_clips(ep, &cfg.encoder)?;
        let z = art.encoder.encode_all(&clips)?;
        let q = crate::protodisc::assign(&art.bank.project(&z)?, &art.proto_cfg)?;
        for i in 0..z.rows {
            out.push_str(&format!(
                "{},{},{},{}",
                ep.embodiment,
                ep.script.complexity.name(),
                ep.task_id,
                i
            ));
            for v in z.row(i) {
                out.push_str(&format!(",{v}"));
            }
            for v in q.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
            rows += 1;
        }
    }
    let mut f =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(rows)
}
