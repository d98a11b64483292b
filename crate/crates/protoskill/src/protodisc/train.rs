//! Joint encoder/prototype training and entropy-based selection of K.

use super::assign::{
    assignment_entropy, raw_usage_entropy, sinkhorn_assign, soft_assign, PrototypeBank,
};
use super::losses::{proto_loss_tape, temporal_loss_tape};
use super::ProtoConfig;
use crate::encoder::{augment, make_clips, ClipWindow, EncoderConfig, SkillEncoder};
use crate::error::{Error, Result};
use crate::numkit::{seeded_rng, Adam, Tape, Tensor, Var};
use crate::simgen::DemoEpisode;
use rand::Rng;
use std::io::Write;
use std::path::Path;

/// Loss curve and usage-entropy samples from one training run.
#[derive(Debug, Clone)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    /// (step, entropy of the step's assignment targets).
    pub entropy_log: Vec<(usize, f64)>,
    /// Whole-dataset usage entropy after training, per the config's
    /// entropy convention.
    pub final_entropy: f64,
}

/// One row of the K-selection sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub k: usize,
    pub h: f64,
    /// |H(next grid K) − H(this K)|; empty on the last grid point.
    pub dh: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SelectionTrace {
    pub entries: Vec<TraceEntry>,
    pub chosen: usize,
}

impl SelectionTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut out = String::from("k,h,dh,chosen\n");
        for e in &self.entries {
            let dh = e.dh.map(|v| v.to_string()).unwrap_or_default();
            let flag = if e.k == self.chosen { 1 } else { 0 };
            out.push_str(&format!("{},{},{},{}\n", e.k, e.h, dh, flag));
        }
        f.write_all(out.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn check_dataset(episodes: &[DemoEpisode]) -> Result<usize> {
    let first = episodes
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    let d_obs = first.frames.cols;
    if episodes.iter().any(|e| e.frames.cols != d_obs) {
        return Err(Error::InvalidArgument(
            "episodes disagree on observation width".into(),
        ));
    }
    Ok(d_obs)
}

/// Assignment of raw similarity scores at the nominal temperature, per
/// the configured assignment mode.
pub fn assign(s_raw: &Tensor, cfg: &ProtoConfig) -> Result<Tensor> {
    if cfg.sinkhorn_assign {
        sinkhorn_assign(s_raw, cfg.tau, cfg.sinkhorn_iters)
    } else {
        soft_assign(s_raw, cfg.tau)
    }
}

/// Training targets: like [`assign`] but sharper than the predictions by
/// the configured temperature ratio, and always detached from the tape.
fn targets(s_raw: &Tensor, cfg: &ProtoConfig) -> Result<Tensor> {
    let sharpened = ProtoConfig {
        tau: cfg.tau * cfg.target_tau_scale,
        ..cfg.clone()
    };
    assign(s_raw, &sharpened)
}

/// Trains the encoder and prototype bank jointly on all clips of
/// `episodes`. Deterministic in `seed`; aborts on non-finite loss.
pub fn train_prototypes(
    episodes: &[DemoEpisode],
    cfg: &ProtoConfig,
    enc_cfg: &EncoderConfig,
    seed: u64,
) -> Result<(SkillEncoder, PrototypeBank, TrainLog)> {
    cfg.validate()?;
    enc_cfg.validate()?;
    let d_obs = check_dataset(episodes)?;

    let clips: Vec<Vec<ClipWindow>> = episodes
        .iter()
        .map(|e| make_clips(e, enc_cfg))
        .collect::<Result<_>>()?;

    let mut init_rng = seeded_rng(seed, "proto-init");
    let mut encoder = SkillEncoder::new(enc_cfg, d_obs, &mut init_rng)?;
    let mut bank = PrototypeBank::new(enc_cfg.d, cfg.k, &mut init_rng)?;

    let mut adam = Adam::new(cfg.lr);
    let mut batch_rng = seeded_rng(seed, "proto-batches");
    let mut aug_rng = seeded_rng(seed, "proto-aug");

    let n = episodes.len();
    let per_batch = cfg.batch_episodes.min(n);
    let mut order: Vec<usize> = (0..n).collect();

    let mut log = TrainLog {
        losses: Vec::with_capacity(cfg.steps),
        entropy_log: Vec::new(),
        final_entropy: 0.0,
    };

    for step in 0..cfg.steps {
        // Draw a batch of distinct episodes.
        for i in 0..per_batch {
            let j = batch_rng.random_range(i..n);
            order.swap(i, j);
        }
        let batch = &order[..per_batch];

        let mut tape = Tape::new();
        let enc_vars = encoder.bind(&mut tape);
        let c_var = tape.leaf(bank.c.clone());

        let mut z1_parts: Vec<Var> = Vec::with_capacity(per_batch);
        let mut z2_parts: Vec<Var> = Vec::with_capacity(per_batch);
        let mut temporal_terms: Vec<Var> = Vec::with_capacity(per_batch);
        for &ei in batch {
            let episode_clips = &clips[ei];
            let view = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<Vec<ClipWindow>> {
                episode_clips
                    .iter()
                    .map(|c| augment(c, &cfg.augment, rng.random()))
                    .collect()
            };
            let v1 = view(&mut aug_rng)?;
            let v2 = view(&mut aug_rng)?;
            let z1 = encoder.encode_batch(&mut tape, &enc_vars, &v1)?;
            let z2 = encoder.encode_batch(&mut tape, &enc_vars, &v2)?;
            if cfg.lambda_temporal > 0.0 {
                temporal_terms.push(temporal_loss_tape(&mut tape, z1, cfg.delta, cfg.tau_tcn)?);
            }
            z1_parts.push(z1);
            z2_parts.push(z2);
        }
        let z1 = tape.concat_all(&z1_parts)?;
        let z2 = tape.concat_all(&z2_parts)?;

        let s1_raw = tape.matmul(z1, c_var)?;
        let s2_raw = tape.matmul(z2, c_var)?;
        let q1 = targets(tape.value(s1_raw), cfg)?;
        let q2 = targets(tape.value(s2_raw), cfg)?;
        if step % cfg.log_every == 0 {
            log.entropy_log.push((step, assignment_entropy(&q1)));
        }

        let s1 = tape.scale(s1_raw, 1.0 / cfg.tau);
        let s2 = tape.scale(s2_raw, 1.0 / cfg.tau);
        let logp1 = tape.log_softmax_rows(s1);
        let logp2 = tape.log_softmax_rows(s2);
        let q1c = tape.constant(q1);
        let q2c = tape.constant(q2);
        let ce_a = proto_loss_tape(&mut tape, q1c, logp2)?;
        let ce_b = proto_loss_tape(&mut tape, q2c, logp1)?;
        let ce_sum = tape.add(ce_a, ce_b)?;
        let mut total = tape.scale(ce_sum, 0.5);

        if cfg.lambda_temporal > 0.0 {
            let mut acc = temporal_terms[0];
            for t in &temporal_terms[1..] {
                acc = tape.add(acc, *t)?;
            }
            let mean = tape.scale(acc, 1.0 / temporal_terms.len() as f64);
            let weighted = tape.scale(mean, cfg.lambda_temporal);
            total = tape.add(total, weighted)?;
        }
        if cfg.lambda_ent > 0.0 {
            // Push usage entropy up: penalize sum p̄ ln p̄ (= −H).
            let p2 = tape.softmax_rows(s2);
            let pbar = tape.mean_axis0(p2);
            let lp = tape.ln(pbar);
            let plp = tape.mul(pbar, lp)?;
            let neg_h = tape.sum_all(plp);
            let reg = tape.scale(neg_h, cfg.lambda_ent);
            total = tape.add(total, reg)?;
        }

        let loss_value = tape.value(total).at(0, 0);
        if !loss_value.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite loss {loss_value} at step {step}"
            )));
        }
        log.losses.push(loss_value);

        let grads = tape.backward(total)?;
        let mut grad_list = enc_vars.grads(&grads, &tape);
        grad_list.push(grads.get(c_var, &tape));
        let mut params = encoder.params_mut();
        params.push(&mut bank.c);
        adam.step(&mut params, &grad_list)?;
        bank.renormalize();
    }

    log.final_entropy = {
        let q = dataset_assignments(&encoder, &bank, episodes, enc_cfg, cfg)?;
        if cfg.raw_entropy {
            raw_usage_entropy(&q)
        } else {
            assignment_entropy(&q)
        }
    };
    Ok((encoder, bank, log))
}

/// Un-augmented assignments of every clip in the dataset, stacked in
/// episode order.
pub fn dataset_assignments(
    encoder: &SkillEncoder,
    bank: &PrototypeBank,
    episodes: &[DemoEpisode],
    enc_cfg: &EncoderConfig,
    cfg: &ProtoConfig,
) -> Result<Tensor> {
    check_dataset(episodes)?;
    let mut qs: Vec<Tensor> = Vec::with_capacity(episodes.len());
    for e in episodes {
        let clips = make_clips(e, enc_cfg)?;
        let z = encoder.encode_all(&clips)?;
        let s = bank.project(&z)?;
        qs.push(assign(&s, cfg)?);
    }
    let mut out = qs[0].clone();
    for q in &qs[1..] {
        out = Tensor::concat_rows(&out, q)?;
    }
    Ok(out)
}

/// Sweeps the K grid with short preliminary trainings and picks the first
/// K where the usage-entropy curve flattens (|ΔH| below the threshold),
/// falling back to the top of the grid.
pub fn select_k(
    episodes: &[DemoEpisode],
    cfg: &ProtoConfig,
    enc_cfg: &EncoderConfig,
    seed: u64,
) -> Result<SelectionTrace> {
    cfg.validate()?;
    let grid = cfg.k_grid();
    if grid.len() < 2 {
        return Err(Error::Config(format!(
            "selection grid needs at least two points; got {:?} from k_min={} k_max={} step={}",
            grid, cfg.k_min, cfg.k_max, cfg.delta_k
        )));
    }

    let mut prelim = cfg.clone();
    prelim.steps = ((cfg.steps as f64 * cfg.prelim_frac).ceil() as usize).max(1);

    let mut hs = Vec::with_capacity(grid.len());
    for &k in &grid {
        let mut cfg_k = prelim.clone();
        cfg_k.k = k;
        let (_, _, log) = train_prototypes(episodes, &cfg_k, enc_cfg, seed)?;
        hs.push(log.final_entropy);
    }

    let theta = cfg.theta();
    let mut entries = Vec::with_capacity(grid.len());
    let mut chosen = None;
    for i in 0..grid.len() {
        let dh = if i + 1 < grid.len() {
            Some((hs[i + 1] - hs[i]).abs())
        } else {
            None
        };
        if chosen.is_none() {
            if let Some(d) = dh {
                if d < theta {
                    chosen = Some(grid[i]);
                }
            }
        }
        entries.push(TraceEntry {
            k: grid[i],
            h: hs[i],
            dh,
        });
    }
    Ok(SelectionTrace {
        entries,
        chosen: chosen.unwrap_or(*grid.last().unwrap()),
    })
}
