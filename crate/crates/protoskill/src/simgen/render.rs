//! Episode rendering: blend activations, latent construction, feature
//! projection, and ground-truth robot actions.

use super::task::TaskScript;
use super::world::World;
use crate::error::{Error, Result};
use crate::numkit::{seeded_rng, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoEpisode {
    pub task_id: String,
    pub script: TaskScript,
    pub embodiment: String,
    pub speed: f64,
    pub seed: u64,
    /// T x d_obs observation features.
    pub frames: Tensor,
    /// T x G ground-truth primitive activations; evaluation only, never an
    /// input to training.
    pub activations: Tensor,
    /// T x 2 per-frame displacements; robot episodes only.
    pub actions: Option<Tensor>,
    /// Rendered segment start indices (one per script entry) plus T.
    pub boundaries: Vec<usize>,
}

impl DemoEpisode {
    pub fn len(&self) -> usize {
        self.frames.rows
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows == 0
    }
}

/// Per-segment frame counts and crossfade widths after speed scaling.
pub fn rendered_layout(
    world: &World,
    script: &TaskScript,
    speed: f64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let durs: Vec<usize> = script
        .primitives
        .iter()
        .map(|&p| {
            let d = (world.primitives[p].duration as f64 / speed).round() as usize;
            d.max(3)
        })
        .collect();
    let blends: Vec<usize> = script
        .overlaps
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let scaled = ((w as f64 / speed).round() as usize).max(2);
            scaled.min(durs[i].min(durs[i + 1]) - 1)
        })
        .collect();
    let mut boundaries = Vec::with_capacity(durs.len() + 1);
    let mut acc = 0;
    boundaries.push(0);
    for &d in &durs {
        acc += d;
        boundaries.push(acc);
    }
    (durs, blends, boundaries)
}

/// Raised-cosine step from 0 to 1 across a window of `w` frames centered
/// on `boundary`; exactly 0.5 at the boundary frame.
fn crossfade(t: usize, boundary: usize, w: usize) -> f64 {
    let u = (t as f64 - boundary as f64) / w as f64 + 0.5;
    let u = u.clamp(0.0, 1.0);
    0.5 * (1.0 - (std::f64::consts::PI * u).cos())
}

/// Per-segment activations (T x script-length): rows are exact partitions
/// of unity by construction (telescoping crossfade steps). Distinct from
/// the per-primitive matrix because a primitive may appear in several
/// segments of one script.
pub fn segment_activations(world: &World, script: &TaskScript, speed: f64) -> Tensor {
    let (_durs, blends, bounds) = rendered_layout(world, script, speed);
    let n = script.primitives.len();
    let t_total = *bounds.last().unwrap();
    let mut act = Tensor::zeros(t_total, n);
    for t in 0..t_total {
        // r[i] = progress of transition i (into segment i+1) at frame t.
        let mut prev_r = 1.0;
        for k in 0..n {
            let next_r = if k + 1 < n {
                crossfade(t, bounds[k + 1], blends[k])
            } else {
                0.0
            };
            act.data[t * n + k] = prev_r - next_r;
            prev_r = next_r;
        }
    }
    act
}

/// Ground-truth per-primitive activation matrix (T x G): per-segment
/// activations folded into each segment's primitive column.
pub fn activation_matrix(world: &World, script: &TaskScript, speed: f64) -> Tensor {
    let seg = segment_activations(world, script, speed);
    let mut act = Tensor::zeros(seg.rows, world.cfg.g);
    for t in 0..seg.rows {
        for (k, &p) in script.primitives.iter().enumerate() {
            act.data[t * world.cfg.g + p] += seg.at(t, k);
        }
    }
    act
}

/// Renders one episode. Deterministic in every argument; the seed feeds
/// only the observation noise.
pub fn render_episode(
    world: &World,
    task_id: &str,
    script: &TaskScript,
    embodiment_name: &str,
    speed: f64,
    seed: u64,
) -> Result<DemoEpisode> {
    if speed <= 0.0 {
        return Err(Error::InvalidArgument(format!("speed must be positive, got {speed}")));
    }
    script.validate(world)?;
    let emb = world.embodiment(embodiment_name)?;
    let cfg = &world.cfg;
    let (durs, _blends, bounds) = rendered_layout(world, script, speed);
    let n = script.primitives.len();
    let t_total = *bounds.last().unwrap();
    let seg_act = segment_activations(world, script, speed);
    let act = activation_matrix(world, script, speed);

    let mut rng = seeded_rng(seed, &format!("episode:{embodiment_name}:{task_id}:{speed}"));
    let is_robot = emb.action_dim.is_some();
    // Effective frame count per segment: the activation column sum, not the
    // nominal duration — crossfade tails at the episode edges shave half a
    // frame off the first and last segments, and dividing displacements by
    // the exact sum keeps the integrated trajectory on the waypoints.
    let seg_frames: Vec<f64> = (0..n)
        .map(|k| (0..t_total).map(|t| seg_act.at(t, k)).sum())
        .collect();
    let mut frames = Tensor::zeros(t_total, cfg.d_obs);
    let mut actions = if is_robot {
        Some(Tensor::zeros(t_total, super::ACTION_DIM))
    } else {
        None
    };

    let tau = std::f64::consts::TAU;
    for t in 0..t_total {
        // Latent feature for this frame: activation-weighted primitive
        // content, rendered differently per embodiment.
        let mut latent = vec![0.0; cfg.d_sig];
        for k in 0..n {
            let a = seg_act.at(t, k);
            if a <= 0.0 {
                continue;
            }
            let p = &world.primitives[script.primitives[k]];
            if is_robot {
                // Robot stream: attenuated signature + progress sawtooth
                // on a shared motion direction. Timing-rich, route-poor.
                let c = ((t as f64 - bounds[k] as f64) / durs[k] as f64).clamp(0.0, 1.0);
                let osc = cfg.amp_robot * (tau * c).sin();
                for d in 0..cfg.d_sig {
                    latent[d] += a
                        * (cfg.sig_atten_robot * p.signature[d]
                            + osc * world.robot_motion[d]);
                }
            } else {
                // Human stream: full signature + clock-driven oscillation,
                // so playback speed changes what a single frame looks like.
                let phase = tau * p.osc_freq * (t as f64 - bounds[k] as f64);
                let osc = cfg.amp_human * phase.sin();
                for d in 0..cfg.d_sig {
                    latent[d] += a * (p.signature[d] + osc * p.motion[d]);
                }
            }
        }
        // obs = latent * map + bias + noise
        for j in 0..cfg.d_obs {
            let mut v = emb.bias[j];
            for d in 0..cfg.d_sig {
                v += latent[d] * emb.feature_map.at(d, j);
            }
            if emb.noise_sigma > 0.0 {
                v += emb.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
            frames.data[t * cfg.d_obs + j] = v;
        }
        if let Some(acts) = actions.as_mut() {
            // Waypoint-tracking velocity: activation-weighted per-segment
            // displacement rates.
            let mut vx = 0.0;
            let mut vy = 0.0;
            for k in 0..n {
                let a = seg_act.at(t, k);
                if a <= 0.0 {
                    continue;
                }
                let p = &world.primitives[script.primitives[k]];
                vx += a * p.goal_offset[0] / seg_frames[k];
                vy += a * p.goal_offset[1] / seg_frames[k];
            }
            acts.data[t * 2] = vx;
            acts.data[t * 2 + 1] = vy;
        }
    }

    Ok(DemoEpisode {
        task_id: task_id.to_string(),
        script: script.clone(),
        embodiment: emb.name.clone(),
        speed,
        seed,
        frames,
        activations: act,
        actions,
        boundaries: bounds,
    })
}
