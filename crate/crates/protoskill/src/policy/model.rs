//! Denoiser network, training loop, and ancestral sampler.

use super::schedule::{forward_diffuse, NoiseSchedule};
use super::PolicyConfig;
use crate::error::{Error, Result};
use crate::numkit::{seeded_rng, Adam, Checkpoint, Mlp, Tensor};
use rand::Rng;

/// One supervised example: conditioning plus the ground-truth chunk.
#[derive(Debug, Clone)]
pub struct PolicySample {
    /// State summary, `1 x state_dim`.
    pub state: Tensor,
    /// Plan context, `1 x cond_dim`.
    pub cond: Tensor,
    /// Ground-truth actions, `t_a x action_dim`.
    pub chunk: Tensor,
}

/// Noise-prediction network with its schedule and normalization stats.
#[derive(Debug, Clone)]
pub struct DiffusionPolicy {
    pub cfg: PolicyConfig,
    pub state_dim: usize,
    pub cond_dim: usize,
    pub net: Mlp,
    pub schedule: NoiseSchedule,
    /// Per-dimension chunk statistics; the net works in normalized space.
    pub act_mean: Tensor,
    pub act_std: Tensor,
    /// Per-column statistics of `[state | cond]`, applied on the way in.
    pub ctx_mean: Tensor,
    pub ctx_std: Tensor,
}

/// Sinusoidal features of the depth index, `sin`/`cos` interleaved with
/// geometrically spaced rates.
fn step_embedding(h: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (i, v) in out.iter_mut().enumerate() {
        let rate = 10000f64.powf(-((2 * (i / 2)) as f64) / dim as f64);
        let arg = h as f64 * rate;
        *v = if i % 2 == 0 { arg.sin() } else { arg.cos() };
    }
    out
}

impl DiffusionPolicy {
    pub fn new(
        cfg: &PolicyConfig,
        state_dim: usize,
        cond_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<DiffusionPolicy> {
        cfg.validate()?;
        let chunk_len = cfg.t_a * cfg.action_dim;
        let mut dims = vec![chunk_len + cfg.step_embed_dim + state_dim + cond_dim];
        dims.extend_from_slice(&cfg.hidden_dims);
        dims.push(chunk_len);
        Ok(DiffusionPolicy {
            cfg: cfg.clone(),
            state_dim,
            cond_dim,
            net: Mlp::new(&dims, rng)?,
            schedule: cfg.schedule()?,
            act_mean: Tensor::zeros(1, cfg.action_dim),
            act_std: Tensor::full(1, cfg.action_dim, 1.0),
            ctx_mean: Tensor::zeros(1, state_dim + cond_dim),
            ctx_std: Tensor::full(1, state_dim + cond_dim, 1.0),
        })
    }

    fn check_conditioning(&self, state: &Tensor, cond: &Tensor) -> Result<()> {
        if state.shape() != (1, self.state_dim) {
            return Err(Error::shape(
                "policy state",
                format!("1x{}", self.state_dim),
                format!("{}x{}", state.rows, state.cols),
            ));
        }
        if cond.shape() != (1, self.cond_dim) {
            return Err(Error::shape(
                "policy cond",
                format!("1x{}", self.cond_dim),
                format!("{}x{}", cond.rows, cond.cols),
            ));
        }
        Ok(())
    }

    /// `[flattened noisy chunk | depth embedding | state | cond]` with the
    /// context block standardized.
    fn input_row(&self, noisy: &Tensor, h: usize, state: &Tensor, cond: &Tensor) -> Vec<f64> {
        let mut row =
            Vec::with_capacity(noisy.data.len() + self.cfg.step_embed_dim + self.state_dim + self.cond_dim);
        row.extend_from_slice(&noisy.data);
        row.extend_from_slice(&step_embedding(h, self.cfg.step_embed_dim));
        for (j, v) in state.data.iter().chain(&cond.data).enumerate() {
            row.push((v - self.ctx_mean.at(0, j)) / self.ctx_std.at(0, j));
        }
        row
    }

    fn normalize(&self, chunk: &Tensor) -> Tensor {
        let mut out = chunk.clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                *out.at_mut(i, j) = (chunk.at(i, j) - self.act_mean.at(0, j)) / self.act_std.at(0, j);
            }
        }
        out
    }

    fn denormalize(&self, chunk: &Tensor) -> Tensor {
        let mut out = chunk.clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                *out.at_mut(i, j) = chunk.at(i, j) * self.act_std.at(0, j) + self.act_mean.at(0, j);
            }
        }
        out
    }

    /// Mean squared noise-prediction error over fresh corruption draws;
    /// the training objective evaluated without gradients.
    pub fn denoise_loss(&self, samples: &[PolicySample], rounds: usize, seed: u64) -> Result<f64> {
        check_samples(samples, &self.cfg, self.state_dim, self.cond_dim)?;
        let mut rng = seeded_rng(seed, "policy-eval");
        let mut sum = 0.0;
        let mut count = 0usize;
        for _ in 0..rounds {
            for s in samples {
                let h = rng.random_range(1..=self.schedule.len());
                let noise = Tensor::randn(self.cfg.t_a, self.cfg.action_dim, 1.0, &mut rng);
                let a0 = self.normalize(&s.chunk);
                let ah = forward_diffuse(&a0, h, &self.schedule, &noise)?;
                let input = Tensor::from_vec(
                    1,
                    self.net.in_dim(),
                    self.input_row(&ah, h, &s.state, &s.cond),
                )?;
                let pred = self.net.infer(&input)?;
                for (p, n) in pred.data.iter().zip(&noise.data) {
                    sum += (p - n) * (p - n);
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::InvalidArgument("denoise_loss needs at least one draw".into()));
        }
        Ok(sum / count as f64)
    }

    /// Draws one action chunk by walking the schedule backwards from pure
    /// noise. Deterministic for a fixed seed.
    pub fn sample_action(&self, state: &Tensor, cond: &Tensor, seed: u64) -> Result<Tensor> {
        self.check_conditioning(state, cond)?;
        let mut rng = seeded_rng(seed, "policy-sample");
        let mut x = Tensor::randn(self.cfg.t_a, self.cfg.action_dim, 1.0, &mut rng);
        for h in (1..=self.schedule.len()).rev() {
            let input = Tensor::from_vec(1, self.net.in_dim(), self.input_row(&x, h, state, cond))?;
            let eps = self.net.infer(&input)?;
            let eps = Tensor::from_vec(self.cfg.t_a, self.cfg.action_dim, eps.data)?;
            let beta = self.schedule.beta(h)?;
            let alpha = self.schedule.alpha(h)?;
            let ab = self.schedule.alpha_bar(h)?;
            let mean = x
                .add(&eps.scale(-beta / (1.0 - ab).sqrt()))?
                .scale(1.0 / alpha.sqrt());
            x = if h > 1 {
                let ab_prev = self.schedule.alpha_bar(h - 1)?;
                let sigma = ((1.0 - ab_prev) / (1.0 - ab) * beta).sqrt();
                let z = Tensor::randn(self.cfg.t_a, self.cfg.action_dim, 1.0, &mut rng);
                mean.add(&z.scale(sigma))?
            } else {
                mean
            };
            if !x.is_finite() {
                return Err(Error::NonFinite("policy sampling"));
            }
        }
        Ok(self.denormalize(&x))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "kind": "policy",
            "cfg": self.cfg,
            "state_dim": self.state_dim,
            "cond_dim": self.cond_dim,
        });
        let mut ck = Checkpoint::new(meta);
        for (name, t) in self.net.named_params("net") {
            ck.insert(&name, t)?;
        }
        ck.insert("norm.mean", &self.act_mean)?;
        ck.insert("norm.std", &self.act_std)?;
        ck.insert("norm.ctx_mean", &self.ctx_mean)?;
        ck.insert("norm.ctx_std", &self.ctx_std)?;
        ck.insert(
            "schedule.betas",
            &Tensor::from_vec(1, self.schedule.len(), self.schedule.betas.clone())?,
        )?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<DiffusionPolicy> {
        let cfg: PolicyConfig = serde_json::from_value(
            ck.meta
                .get("cfg")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing policy cfg".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("bad policy cfg: {e}")))?;
        let state_dim = ck.meta_usize("state_dim")?;
        let cond_dim = ck.meta_usize("cond_dim")?;
        let mut rng = seeded_rng(0, "policy-load");
        let mut pol = DiffusionPolicy::new(&cfg, state_dim, cond_dim, &mut rng)?;
        for (name, param) in pol.net.named_params_mut("net") {
            let stored = ck.tensor(&name)?;
            if stored.shape() != param.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?} does not match model {:?}",
                    stored.shape(),
                    param.shape()
                )));
            }
            *param = stored.clone();
        }
        pol.act_mean = ck.tensor("norm.mean")?.clone();
        pol.act_std = ck.tensor("norm.std")?.clone();
        pol.ctx_mean = ck.tensor("norm.ctx_mean")?.clone();
        pol.ctx_std = ck.tensor("norm.ctx_std")?.clone();
        pol.schedule = NoiseSchedule::from_betas(ck.tensor("schedule.betas")?.data.clone())?;
        if pol.schedule.len() != cfg.horizon {
            return Err(Error::Checkpoint(format!(
                "schedule length {} does not match cfg horizon {}",
                pol.schedule.len(),
                cfg.horizon
            )));
        }
        Ok(pol)
    }
}

fn check_samples(
    samples: &[PolicySample],
    cfg: &PolicyConfig,
    state_dim: usize,
    cond_dim: usize,
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("policy needs at least one sample".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.state.shape() != (1, state_dim)
            || s.cond.shape() != (1, cond_dim)
            || s.chunk.shape() != (cfg.t_a, cfg.action_dim)
        {
            return Err(Error::InvalidArgument(format!(
                "sample {i}: shapes state {:?} cond {:?} chunk {:?} do not match \
                 (1,{state_dim}) (1,{cond_dim}) ({},{})",
                s.state.shape(),
                s.cond.shape(),
                s.chunk.shape(),
                cfg.t_a,
                cfg.action_dim
            )));
        }
        if !(s.state.is_finite() && s.cond.is_finite() && s.chunk.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {i}: non-finite values")));
        }
    }
    Ok(())
}

/// Fits the noise-prediction net by regressing the injected noise at random
/// depths. Returns the policy and the per-step loss curve.
pub fn train_policy(
    samples: &[PolicySample],
    cfg: &PolicyConfig,
    seed: u64,
) -> Result<(DiffusionPolicy, Vec<f64>)> {
    cfg.validate()?;
    let state_dim = samples.first().map(|s| s.state.cols).unwrap_or(0);
    let cond_dim = samples.first().map(|s| s.cond.cols).unwrap_or(0);
    check_samples(samples, cfg, state_dim, cond_dim)?;

    let mut init_rng = seeded_rng(seed, "policy-init");
    let mut pol = DiffusionPolicy::new(cfg, state_dim, cond_dim, &mut init_rng)?;

    // Per-dimension normalization over every chunk entry; a floor keeps
    // constant dimensions harmless.
    let n_entries = (samples.len() * cfg.t_a) as f64;
    for j in 0..cfg.action_dim {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for s in samples {
            for i in 0..cfg.t_a {
                sum += s.chunk.at(i, j);
                sum_sq += s.chunk.at(i, j) * s.chunk.at(i, j);
            }
        }
        let mean = sum / n_entries;
        let var = (sum_sq / n_entries - mean * mean).max(0.0);
        *pol.act_mean.at_mut(0, j) = mean;
        *pol.act_std.at_mut(0, j) = var.sqrt().max(1e-6);
    }
    let n = samples.len() as f64;
    for j in 0..state_dim + cond_dim {
        let get = |s: &PolicySample| {
            if j < state_dim {
                s.state.at(0, j)
            } else {
                s.cond.at(0, j - state_dim)
            }
        };
        let mean = samples.iter().map(&get).sum::<f64>() / n;
        let var = samples.iter().map(|s| (get(s) - mean).powi(2)).sum::<f64>() / n;
        *pol.ctx_mean.at_mut(0, j) = mean;
        *pol.ctx_std.at_mut(0, j) = var.sqrt().max(1e-6);
    }
    let normed: Vec<Tensor> = samples.iter().map(|s| pol.normalize(&s.chunk)).collect();

    let mut rng = seeded_rng(seed, "policy-train");
    let mut adam = Adam::new(cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    let out_dim = cfg.t_a * cfg.action_dim;

    for step in 0..cfg.steps {
        // Cosine decay to a tenth of the base rate settles the tail.
        let t = step as f64 / cfg.steps.max(1) as f64;
        adam.lr = cfg.lr * (0.55 + 0.45 * (std::f64::consts::PI * t).cos());
        let mut input = Vec::with_capacity(cfg.batch * pol.net.in_dim());
        let mut target = Vec::with_capacity(cfg.batch * out_dim);
        for _ in 0..cfg.batch {
            let idx = rng.random_range(0..samples.len());
            let h = rng.random_range(1..=pol.schedule.len());
            let noise = Tensor::randn(cfg.t_a, cfg.action_dim, 1.0, &mut rng);
            let ah = forward_diffuse(&normed[idx], h, &pol.schedule, &noise)?;
            input.extend(pol.input_row(&ah, h, &samples[idx].state, &samples[idx].cond));
            target.extend_from_slice(&noise.data);
        }
        let input = Tensor::from_vec(cfg.batch, pol.net.in_dim(), input)?;
        let target = Tensor::from_vec(cfg.batch, out_dim, target)?;

        let mut tape = crate::numkit::Tape::new();
        let vars = pol.net.bind(&mut tape);
        let xv = tape.constant(input);
        let pred = pol.net.forward(&mut tape, &vars, xv)?;
        let tv = tape.constant(target);
        let d = tape.sub(pred, tv)?;
        let d2 = tape.mul(d, d)?;
        let loss = tape.mean_all(d2);

        let loss_val = tape.value(loss).at(0, 0);
        if !loss_val.is_finite() {
            return Err(Error::Diverged(format!("policy loss at step {step}")));
        }
        losses.push(loss_val);

        let grads = tape.backward(loss)?;
        let gs = vars.grads(&grads, &tape);
        adam.step(&mut pol.net.params_mut(), &gs)?;
    }
    Ok((pol, losses))
}
