//! Monotone attention over a prototype plan.

use super::{AlignConfig, PrototypePlan};
use crate::encoder::{ClipWindow, SkillEncoder};
use crate::error::{Error, Result};
use crate::numkit::{seeded_rng, Adam, Checkpoint, Tape, Tensor};
use rand::Rng;
use std::io::Write;
use std::path::Path;

/// Finite stand-in for -inf in score rows; exp() underflows to zero
/// without poisoning the row-max subtraction inside softmax.
const MASKED: f64 = -1e18;

/// Learned query/key projections for plan attention.
#[derive(Debug, Clone)]
pub struct SamParams {
    pub wq: Tensor,
    pub wk: Tensor,
}

impl SamParams {
    /// Near-identity start: raw embedding similarity is already a decent
    /// matcher, training only has to sharpen it.
    pub fn new(d: usize, rng: &mut impl Rng) -> Result<SamParams> {
        if d < 1 {
            return Err(Error::InvalidArgument("projection dim must be positive".into()));
        }
        let noise = Tensor::randn(d, d, 0.05, rng);
        let mut eye = Tensor::zeros(d, d);
        for i in 0..d {
            *eye.at_mut(i, i) = 1.0;
        }
        Ok(SamParams {
            wq: eye.add(&noise)?,
            wk: eye.add(&Tensor::randn(d, d, 0.05, rng))?,
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.rows
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({ "kind": "sam", "d": self.dim() });
        let mut ck = Checkpoint::new(meta);
        ck.insert("wq", &self.wq)?;
        ck.insert("wk", &self.wk)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<SamParams> {
        let d = ck.meta_usize("d")?;
        let wq = ck.tensor("wq")?.clone();
        let wk = ck.tensor("wk")?.clone();
        if wq.shape() != (d, d) || wk.shape() != (d, d) {
            return Err(Error::Checkpoint(format!(
                "sam projections must be {d}x{d}, got {:?} and {:?}",
                wq.shape(),
                wk.shape()
            )));
        }
        Ok(SamParams { wq, wk })
    }
}

/// Progress through one plan during one execution.
#[derive(Debug, Clone)]
pub struct AlignState {
    /// Soft index into the plan, non-decreasing, in `[0, T_p - 1]`.
    pub position: f64,
    /// Attention weights from the most recent step; empty before the first.
    pub last_weights: Vec<f64>,
}

impl AlignState {
    pub fn new() -> AlignState {
        AlignState { position: 0.0, last_weights: Vec::new() }
    }
}

impl Default for AlignState {
    fn default() -> Self {
        AlignState::new()
    }
}

/// Additive score adjustments around the current position: quadratic
/// penalty beyond `window` ahead, hard mask beyond `window` behind.
fn monotone_bias(t_p: usize, position: f64, cfg: &AlignConfig) -> Tensor {
    let mut bias = Tensor::zeros(1, t_p);
    for i in 0..t_p {
        let idx = i as f64;
        if idx < position - cfg.window as f64 {
            *bias.at_mut(0, i) = MASKED;
        } else {
            let ahead = idx - position - cfg.window as f64;
            if ahead > 0.0 {
                *bias.at_mut(0, i) = -cfg.gamma * ahead * ahead;
            }
        }
    }
    bias
}

fn attention_scores(
    query_z: &Tensor,
    plan: &PrototypePlan,
    sam: &SamParams,
    cfg: &AlignConfig,
) -> Result<Tensor> {
    if cfg.parameter_free {
        // Embeddings are unit rows, so the dot product is the cosine.
        Ok(query_z
            .matmul(&plan.embeddings.transpose())?
            .scale(1.0 / cfg.cosine_tau))
    } else {
        let q = query_z.matmul(&sam.wq)?;
        let k = plan.embeddings.matmul(&sam.wk)?;
        Ok(q.matmul(&k.transpose())?.scale(1.0 / (q.cols as f64).sqrt()))
    }
}

/// One alignment step: encode the robot's recent window, attend over the
/// plan under the monotone prior, and emit the conditioning vector.
/// Returns `(z_hat, advanced state)`.
pub fn align_step(
    plan: &PrototypePlan,
    window: &Tensor,
    state: &AlignState,
    enc: &SkillEncoder,
    sam: &SamParams,
    cfg: &AlignConfig,
) -> Result<(Tensor, AlignState)> {
    cfg.validate()?;
    plan.validate()?;
    let clip = ClipWindow {
        frames: window.clone(),
        episode: plan.source.clone(),
        start: 0,
    };
    let z = enc.encode(&clip)?;
    let scores = attention_scores(&z, plan, sam, cfg)?;
    let biased = scores.add(&monotone_bias(plan.len(), state.position, cfg))?;
    let weights = biased.softmax_rows();
    let z_hat = weights.matmul(&plan.cond_matrix())?;
    let expected: f64 = weights
        .row(0)
        .iter()
        .enumerate()
        .map(|(i, w)| w * i as f64)
        .sum();
    let next = AlignState {
        position: state.position.max(expected),
        last_weights: weights.row(0).to_vec(),
    };
    debug_assert!(next.position >= state.position);
    Ok((z_hat, next))
}

/// Replay objective: on a robot episode aligned against its own plan, the
/// attention at clip `t` (with progress teacher-forced to `t - 1`) should
/// put its mass on index `t`. Returns trained projections and the loss
/// curve.
pub fn train_sam(
    plans: &[PrototypePlan],
    cfg: &AlignConfig,
    seed: u64,
) -> Result<(SamParams, Vec<f64>)> {
    cfg.validate()?;
    if plans.is_empty() {
        return Err(Error::InvalidArgument("sam training needs at least one plan".into()));
    }
    for p in plans {
        p.validate()?;
    }
    let d = plans[0].embeddings.cols;
    if plans.iter().any(|p| p.embeddings.cols != d) {
        return Err(Error::InvalidArgument("plans disagree on embedding width".into()));
    }

    let mut init_rng = seeded_rng(seed, "sam-init");
    let mut sam = SamParams::new(d, &mut init_rng)?;
    let mut rng = seeded_rng(seed, "sam-train");
    let mut adam = Adam::new(cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    let scale = 1.0 / (d as f64).sqrt();

    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let wq = tape.leaf(sam.wq.clone());
        let wk = tape.leaf(sam.wk.clone());
        let mut pair_losses = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let plan = &plans[rng.random_range(0..plans.len())];
            let t = rng.random_range(0..plan.len());
            let prev = (t as f64 - 1.0).max(0.0);

            let zq = tape.constant(Tensor::from_vec(1, d, plan.embeddings.row(t).to_vec())?);
            let emb = tape.constant(plan.embeddings.clone());
            let q = tape.matmul(zq, wq)?;
            let k = tape.matmul(emb, wk)?;
            let kt = tape.transpose(k);
            let raw = tape.matmul(q, kt)?;
            let scaled = tape.scale(raw, scale);
            let bias = tape.constant(monotone_bias(plan.len(), prev, cfg));
            let biased = tape.add(scaled, bias)?;
            let logp = tape.log_softmax_rows(biased);
            let mut hot = Tensor::zeros(1, plan.len());
            *hot.at_mut(0, t) = -1.0;
            let hotv = tape.constant(hot);
            let picked = tape.mul(logp, hotv)?;
            pair_losses.push(tape.sum_all(picked));
        }
        let stacked = tape.concat_all(&pair_losses)?;
        let loss = tape.mean_all(stacked);
        let loss_val = tape.value(loss).at(0, 0);
        if !loss_val.is_finite() {
            return Err(Error::Diverged(format!("sam loss at step {step}")));
        }
        losses.push(loss_val);

        let grads = tape.backward(loss)?;
        let gq = grads.get(wq, &tape);
        let gk = grads.get(wk, &tape);
        adam.step(&mut [&mut sam.wq, &mut sam.wk], &[gq, gk])?;
    }
    Ok((sam, losses))
}

/// One row per control step: soft position plus the three heaviest plan
/// indices and their weights.
pub fn write_align_trace(path: &Path, states: &[AlignState]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut f =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = String::from("step,position,i1,w1,i2,w2,i3,w3\n");
    for (step, s) in states.iter().enumerate() {
        let mut ranked: Vec<(usize, f64)> =
            s.last_weights.iter().cloned().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        out.push_str(&format!("{},{}", step, s.position));
        for j in 0..3 {
            match ranked.get(j) {
                Some((i, w)) => out.push_str(&format!(",{i},{w}")),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}
