//! World construction: primitive vocabulary and embodiment feature maps.

use super::{SimgenConfig, ACTION_DIM};
use crate::error::{Error, Result};
use crate::numkit::{seeded_rng, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct PrimitiveSpec {
    pub id: usize,
    /// Workspace displacement this primitive produces at x1.0.
    pub goal_offset: [f64; 2],
    /// Frames at x1.0; goal_offset length is speed_per_frame * duration.
    pub duration: usize,
    /// Unit latent direction identifying the primitive.
    pub signature: Vec<f64>,
    /// Unit latent direction of the within-primitive oscillation,
    /// orthogonal to the signature.
    pub motion: Vec<f64>,
    /// Oscillation frequency in cycles per rendered frame (human side).
    pub osc_freq: f64,
}

#[derive(Debug, Clone)]
pub struct Embodiment {
    pub name: String,
    /// d_sig x d_obs; observations are latent_row * map + bias.
    pub feature_map: Tensor,
    pub bias: Vec<f64>,
    pub noise_sigma: f64,
    /// Action dimension; robot only.
    pub action_dim: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub cfg: SimgenConfig,
    pub primitives: Vec<PrimitiveSpec>,
    pub human: Embodiment,
    pub robot: Embodiment,
    /// Shared robot-side oscillation direction (segment-progress sawtooth).
    pub robot_motion: Vec<f64>,
    pub seed: u64,
}

const MAX_SIG_COS: f64 = 0.8;

fn unit_randn(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Row rank of a matrix by Gaussian elimination with partial pivoting.
fn matrix_rank(m: &Tensor, tol: f64) -> usize {
    let mut a = m.clone();
    let (rows, cols) = (a.rows, a.cols);
    let mut rank = 0;
    let mut col = 0;
    while rank < rows && col < cols {
        let mut pivot = rank;
        for r in rank + 1..rows {
            if a.at(r, col).abs() > a.at(pivot, col).abs() {
                pivot = r;
            }
        }
        if a.at(pivot, col).abs() < tol {
            col += 1;
            continue;
        }
        if pivot != rank {
            for c in 0..cols {
                let tmp = a.at(rank, c);
                *a.at_mut(rank, c) = a.at(pivot, c);
                *a.at_mut(pivot, c) = tmp;
            }
        }
        for r in rank + 1..rows {
            let f = a.at(r, col) / a.at(rank, col);
            for c in col..cols {
                *a.at_mut(r, c) -= f * a.at(rank, c);
            }
        }
        rank += 1;
        col += 1;
    }
    rank
}

impl World {
    /// Deterministically builds a world from (config, seed).
    pub fn generate(cfg: &SimgenConfig, seed: u64) -> Result<World> {
        if cfg.g < 2 || cfg.d_sig < 3 || cfg.d_obs < cfg.d_sig {
            return Err(Error::InvalidArgument(format!(
                "world dims out of range: g={}, d_sig={}, d_obs={}",
                cfg.g, cfg.d_sig, cfg.d_obs
            )));
        }
        if cfg.dur_min < 4 || cfg.dur_max < cfg.dur_min {
            return Err(Error::InvalidArgument(
                "primitive durations must satisfy 4 <= dur_min <= dur_max".into(),
            ));
        }
        if cfg.blend >= cfg.dur_min {
            return Err(Error::InvalidArgument(
                "blend width must be below the minimum primitive duration".into(),
            ));
        }
        let mut rng = seeded_rng(seed, "world");

        // Signatures: rejection-sample until pairwise cosines stay below
        // the separation bound.
        let mut signatures: Vec<Vec<f64>> = Vec::with_capacity(cfg.g);
        let mut attempts = 0;
        while signatures.len() < cfg.g {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::InvalidArgument(
                    "could not sample separated signatures; d_sig too small for g".into(),
                ));
            }
            let cand = unit_randn(cfg.d_sig, &mut rng);
            if signatures.iter().all(|s| cosine(s, &cand).abs() < MAX_SIG_COS) {
                signatures.push(cand);
            }
        }

        let mut primitives = Vec::with_capacity(cfg.g);
        for (id, signature) in signatures.into_iter().enumerate() {
            // Motion direction orthogonal to the signature so the
            // oscillation never masquerades as a different primitive.
            let motion = {
                let raw = unit_randn(cfg.d_sig, &mut rng);
                let dot: f64 = raw.iter().zip(&signature).map(|(a, b)| a * b).sum();
                let v: Vec<f64> = raw
                    .iter()
                    .zip(&signature)
                    .map(|(r, s)| r - dot * s)
                    .collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / n).collect::<Vec<f64>>()
            };
            let duration = rng.random_range(cfg.dur_min..=cfg.dur_max);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let len = cfg.speed_per_frame * duration as f64;
            let goal_offset = [len * angle.cos(), len * angle.sin()];
            let osc_freq = rng.random_range(cfg.osc_freq_min..=cfg.osc_freq_max);
            primitives.push(PrimitiveSpec {
                id,
                goal_offset,
                duration,
                signature,
                motion,
                osc_freq,
            });
        }

        let robot_motion = unit_randn(cfg.d_sig, &mut rng);

        let make_map = |rng: &mut rand_chacha::ChaCha8Rng| -> Tensor {
            let scale = 1.0 / (cfg.d_sig as f64).sqrt();
            Tensor::randn(cfg.d_sig, cfg.d_obs, scale, rng)
        };
        let a0 = make_map(&mut rng);
        let build_emb = |name: &str, noise: f64, action_dim: Option<usize>,
                             rng: &mut rand_chacha::ChaCha8Rng|
         -> Result<Embodiment> {
            let e = make_map(rng);
            let mut map = a0.clone();
            for i in 0..map.data.len() {
                map.data[i] += cfg.map_mix * e.data[i];
            }
            if matrix_rank(&map, 1e-9) < cfg.d_sig {
                return Err(Error::InvalidArgument(format!(
                    "embodiment map for {name} is rank deficient"
                )));
            }
            let bias: Vec<f64> = (0..cfg.d_obs)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * cfg.bias_scale)
                .collect();
            Ok(Embodiment {
                name: name.to_string(),
                feature_map: map,
                bias,
                noise_sigma: noise,
                action_dim,
            })
        };
        let human = build_emb("human", cfg.noise_human, None, &mut rng)?;
        let robot = build_emb("robot", cfg.noise_robot, Some(ACTION_DIM), &mut rng)?;

        Ok(World {
            cfg: cfg.clone(),
            primitives,
            human,
            robot,
            robot_motion,
            seed,
        })
    }

    pub fn embodiment(&self, name: &str) -> Result<&Embodiment> {
        match name {
            "human" => Ok(&self.human),
            "robot" => Ok(&self.robot),
            other => Err(Error::InvalidArgument(format!(
                "unknown embodiment {other:?} (expected human or robot)"
            ))),
        }
    }
}
