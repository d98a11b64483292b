//! The two self-supervised objectives: swapped-prediction cross-entropy
//! over prototype assignments, and temporal InfoNCE over clip sequences.
//!
//! Each loss exists twice: a plain-tensor version used as an evaluation
//! oracle and in tests, and a tape version the training loop
//! differentiates. The tape versions work in log space via log-softmax.

use crate::error::{Error, Result};
use crate::numkit::{Tape, Tensor, Var};

/// Mean cross-entropy from target assignment rows `q1` to predicted
/// distributions `p2`: -(1/B) ΣΣ q1·log p2. The training loop symmetrizes
/// by calling this twice with the views swapped and averaging.
pub fn proto_loss(q1: &Tensor, p2: &Tensor) -> Result<f64> {
    if !q1.same_shape(p2) {
        return Err(Error::shape(
            "proto_loss",
            format!("{}x{}", q1.rows, q1.cols),
            format!("{}x{}", p2.rows, p2.cols),
        ));
    }
    if p2.data.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument(
            "proto_loss: predictions must be strictly positive".into(),
        ));
    }
    let mut total = 0.0;
    for (q, p) in q1.data.iter().zip(&p2.data) {
        if *q > 0.0 {
            total -= q * p.ln();
        }
    }
    Ok(total / q1.rows as f64)
}

/// Tape counterpart of [`proto_loss`]: `log_p2` are log-probabilities
/// (from log-softmax), `q1` is a constant target.
pub fn proto_loss_tape(tape: &mut Tape, q1: Var, log_p2: Var) -> Result<Var> {
    let b = tape.value(q1).rows as f64;
    let prod = tape.mul(q1, log_p2)?;
    let s = tape.sum_all(prod);
    Ok(tape.scale(s, -1.0 / b))
}

/// InfoNCE over one episode's ordered clip embeddings: each clip i is
/// pulled toward clip i+delta and pushed from every other clip, with
/// cosine similarity at temperature `tau_tcn`. Returns the mean over the
/// N-delta anchors.
pub fn temporal_loss(z_seq: &Tensor, delta: usize, tau_tcn: f64) -> Result<f64> {
    let (built, _) = temporal_loss_graph(z_seq.clone(), delta, tau_tcn)?;
    Ok(built)
}

/// Shared plain-tensor implementation; also used to cross-check the tape
/// version in tests.
fn temporal_loss_graph(z: Tensor, delta: usize, tau: f64) -> Result<(f64, usize)> {
    validate_temporal(&z, delta, tau)?;
    let n = z.rows;
    let zn = z.l2_normalize_rows(1e-12);
    let sims = zn.matmul(&zn.transpose())?.scale(1.0 / tau);
    let mut total = 0.0;
    let anchors = n - delta;
    for i in 0..anchors {
        // log-sum-exp over j != i.
        let mut m = f64::NEG_INFINITY;
        for j in 0..n {
            if j != i {
                m = m.max(sims.at(i, j));
            }
        }
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += (sims.at(i, j) - m).exp();
            }
        }
        total -= sims.at(i, i + delta) - (m + denom.ln());
    }
    Ok((total / anchors as f64, anchors))
}

fn validate_temporal(z: &Tensor, delta: usize, tau: f64) -> Result<()> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("bad temperature {tau}")));
    }
    if delta < 1 {
        return Err(Error::InvalidArgument("temporal offset must be >= 1".into()));
    }
    if z.rows <= delta {
        return Err(Error::InvalidArgument(format!(
            "sequence of {} clips is too short for offset {delta}",
            z.rows
        )));
    }
    Ok(())
}

/// Tape counterpart of [`temporal_loss`]. `z` is a tape var holding the
/// episode's clip embeddings in order.
pub fn temporal_loss_tape(tape: &mut Tape, z: Var, delta: usize, tau: f64) -> Result<Var> {
    validate_temporal(tape.value(z), delta, tau)?;
    let n = tape.value(z).rows;
    let anchors = n - delta;

    let zn = tape.l2_normalize_rows(z, 1e-12);
    let znt = tape.transpose(zn);
    let raw = tape.matmul(zn, znt)?;
    let sims = tape.scale(raw, 1.0 / tau);

    // Positive-pair selector: row i picks entry (i, i+delta).
    let mut sel = Tensor::zeros(n, n);
    // Self-exclusion for the denominator.
    let mut diag_mask = Tensor::zeros(n, n);
    // Anchor indicator zeroes out the trailing rows that have no positive.
    let mut anchor = Tensor::zeros(n, 1);
    for i in 0..n {
        *diag_mask.at_mut(i, i) = -1e9;
        if i < anchors {
            *sel.at_mut(i, i + delta) = 1.0;
            *anchor.at_mut(i, 0) = 1.0;
        }
    }
    let sel = tape.constant(sel);
    let diag_mask = tape.constant(diag_mask);
    let anchor = tape.constant(anchor);

    let picked = tape.mul(sims, sel)?;
    let pos = tape.sum_rows(picked);
    let masked = tape.add(sims, diag_mask)?;
    let lse = tape.logsumexp_rows(masked);
    let per_row = tape.sub(pos, lse)?;
    let only_anchors = tape.mul(per_row, anchor)?;
    let s = tape.sum_all(only_anchors);
    Ok(tape.scale(s, -1.0 / anchors as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gradcheck::max_grad_check_error;
    use crate::numkit::seeded_rng;
    use crate::protodisc::soft_assign;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    fn onehot(rows: usize, k: usize, at: usize) -> Tensor {
        let mut t = Tensor::zeros(rows, k);
        for i in 0..rows {
            *t.at_mut(i, at) = 1.0;
        }
        t
    }

    #[test]
    fn perfect_agreement_is_zero() {
        let q = onehot(4, 5, 2);
        // Literal one-hot predictions carry zero entries and are rejected;
        // an epsilon away from one-hot the loss approaches zero.
        assert!(proto_loss(&q, &q).is_err());
        let mut p = Tensor::full(4, 5, 1e-12);
        for i in 0..4 {
            *p.at_mut(i, 2) = 1.0 - 4e-12;
        }
        let l = proto_loss(&q, &p).unwrap();
        assert!(l.abs() < 1e-9, "loss {l}");
    }

    #[test]
    fn onehot_vs_uniform_is_log_k() {
        let k = 7;
        let q = onehot(3, k, 4);
        let p = Tensor::full(3, k, 1.0 / k as f64);
        close(proto_loss(&q, &p).unwrap(), (k as f64).ln(), 1e-12);
    }

    #[test]
    fn matches_double_sum_oracle() {
        let mut rng = seeded_rng(1, "pl");
        let q = soft_assign(&Tensor::randn(5, 4, 1.0, &mut rng), 0.3).unwrap();
        let p = soft_assign(&Tensor::randn(5, 4, 1.0, &mut rng), 0.3).unwrap();
        let mut direct = 0.0;
        for i in 0..5 {
            for j in 0..4 {
                direct -= q.at(i, j) * p.at(i, j).ln();
            }
        }
        close(proto_loss(&q, &p).unwrap(), direct / 5.0, 1e-12);
    }

    #[test]
    fn loss_is_nonnegative_and_shape_checked() {
        let mut rng = seeded_rng(2, "pl");
        for seed in 0..10 {
            let q = soft_assign(&Tensor::randn(6, 5, 1.0 + seed as f64 * 0.1, &mut rng), 0.2)
                .unwrap();
            let p = soft_assign(&Tensor::randn(6, 5, 1.0, &mut rng), 0.2).unwrap();
            assert!(proto_loss(&q, &p).unwrap() >= 0.0);
        }
        let q = Tensor::zeros(2, 3);
        let p = Tensor::zeros(2, 4);
        assert!(proto_loss(&q, &p).is_err());
    }

    #[test]
    fn tape_proto_loss_matches_plain() {
        let mut rng = seeded_rng(3, "pl");
        let s1 = Tensor::randn(5, 4, 1.0, &mut rng);
        let s2 = Tensor::randn(5, 4, 1.0, &mut rng);
        let q1 = soft_assign(&s1, 0.5).unwrap();
        let p2 = soft_assign(&s2, 0.5).unwrap();
        let direct = proto_loss(&q1, &p2).unwrap();

        let mut tape = Tape::new();
        let qv = tape.constant(q1);
        let sv = tape.constant(s2.scale(1.0 / 0.5));
        let logp = tape.log_softmax_rows(sv);
        let loss = proto_loss_tape(&mut tape, qv, logp).unwrap();
        close(tape.value(loss).at(0, 0), direct, 1e-12);
    }

    #[test]
    fn identical_embeddings_hit_uniform_baseline() {
        let n = 9;
        let z = Tensor::full(n, 4, 0.5);
        let l = temporal_loss(&z, 1, 0.1).unwrap();
        close(l, (n as f64 - 1.0).ln(), 1e-9);
    }

    #[test]
    fn clustered_positives_beat_uniform_baseline() {
        // Two orthogonal clusters in contiguous runs: every positive pair
        // except the single run boundary shares a cluster, so the ordered
        // sequence scores below the all-equal baseline, while an
        // interleaved control (every positive crosses clusters) scores
        // above it.
        let mut rng = seeded_rng(4, "tl");
        let n = 12;
        let mut z = Tensor::zeros(n, 6);
        for i in 0..n {
            let axis = if i < n / 2 { 0 } else { 1 };
            z.data[i * 6 + axis] = 1.0;
            for j in 0..6 {
                z.data[i * 6 + j] +=
                    0.01 * rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal);
            }
        }
        let baseline = (n as f64 - 1.0).ln();
        let l = temporal_loss(&z, 1, 0.2).unwrap();
        assert!(l < baseline, "loss {l} not below baseline {baseline}");

        let mut shuffled = Tensor::zeros(n, 6);
        for i in 0..n {
            let src = if i % 2 == 0 { i / 2 } else { n / 2 + i / 2 };
            shuffled.data[i * 6..(i + 1) * 6].copy_from_slice(z.row(src));
        }
        let ls = temporal_loss(&shuffled, 1, 0.2).unwrap();
        assert!(l < ls, "ordered {l} not better than interleaved {ls}");
    }

    #[test]
    fn temporal_loss_validates_inputs() {
        let z = Tensor::zeros(3, 4);
        assert!(temporal_loss(&z, 3, 0.1).is_err());
        assert!(temporal_loss(&z, 0, 0.1).is_err());
        assert!(temporal_loss(&z, 1, 0.0).is_err());
    }

    #[test]
    fn tape_temporal_matches_plain() {
        let mut rng = seeded_rng(5, "tl");
        let z = Tensor::randn(8, 5, 1.0, &mut rng);
        for delta in [1usize, 2] {
            let direct = temporal_loss(&z, delta, 0.2).unwrap();
            let mut tape = Tape::new();
            let zv = tape.constant(z.clone());
            let l = temporal_loss_tape(&mut tape, zv, delta, 0.2).unwrap();
            close(tape.value(l).at(0, 0), direct, 1e-10);
        }
    }

    #[test]
    fn temporal_gradient_passes_finite_differences() {
        let mut rng = seeded_rng(6, "tl");
        let z = Tensor::randn(6, 4, 1.0, &mut rng);
        let err = max_grad_check_error(&[z], |tape, vs| {
            temporal_loss_tape(tape, vs[0], 1, 0.2)
        })
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn swapped_prediction_gradient_passes_finite_differences() {
        // Full training-style composition: embeddings and prototypes both
        // receive gradient through log-softmax; targets are constants.
        let mut rng = seeded_rng(7, "pl");
        let z = Tensor::randn(5, 4, 1.0, &mut rng);
        let c = Tensor::randn(4, 6, 1.0, &mut rng);
        let tgt = soft_assign(&Tensor::randn(5, 6, 1.0, &mut rng), 0.3).unwrap();
        let err = max_grad_check_error(&[z, c], move |tape, vs| {
            let s = tape.matmul(vs[0], vs[1])?;
            let scaled = tape.scale(s, 1.0 / 0.3);
            let logp = tape.log_softmax_rows(scaled);
            let t = tape.constant(tgt.clone());
            proto_loss_tape(tape, t, logp)
        })
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }
}
