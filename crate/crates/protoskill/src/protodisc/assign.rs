//! Prototype bank and the assignment operators over it.

use crate::error::{Error, Result};
use crate::numkit::{Checkpoint, Tensor};
use rand::Rng;

/// Learnable prototype directions, stored d x K with unit-norm columns.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    pub c: Tensor,
}

impl PrototypeBank {
    pub fn new(d: usize, k: usize, rng: &mut impl Rng) -> Result<PrototypeBank> {
        if d < 1 || k < 1 {
            return Err(Error::InvalidArgument(format!("bad prototype shape {d}x{k}")));
        }
        let mut bank = PrototypeBank {
            c: Tensor::randn(d, k, 1.0, rng),
        };
        bank.renormalize();
        Ok(bank)
    }

    pub fn d(&self) -> usize {
        self.c.rows
    }

    pub fn k(&self) -> usize {
        self.c.cols
    }

    /// Rescales every column to unit L2 norm; run after each optimizer
    /// step so similarities stay cosines.
    pub fn renormalize(&mut self) {
        let (d, k) = self.c.shape();
        for j in 0..k {
            let mut n = 0.0;
            for i in 0..d {
                n += self.c.at(i, j) * self.c.at(i, j);
            }
            let n = n.sqrt().max(1e-12);
            for i in 0..d {
                *self.c.at_mut(i, j) /= n;
            }
        }
    }

    /// Similarity of each embedding row to each prototype: S = Z·C, B x K.
    /// Cosine by construction when Z rows and C columns are unit.
    pub fn project(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols != self.c.rows {
            return Err(Error::shape(
                "project",
                format!("embeddings with {} columns", self.c.rows),
                format!("{}x{}", z.rows, z.cols),
            ));
        }
        z.matmul(&self.c)
    }

    pub fn to_checkpoint(&self, tau: f64) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "kind": "prototypes",
            "k": self.k(),
            "d": self.d(),
            "tau": tau,
        });
        let mut ck = Checkpoint::new(meta);
        ck.insert("c", &self.c)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(PrototypeBank, f64)> {
        let c = ck.tensor("c")?.clone();
        let tau = ck.meta_f64("tau")?;
        if ck.meta_usize("d")? != c.rows || ck.meta_usize("k")? != c.cols {
            return Err(Error::Checkpoint("prototype shape disagrees with header".into()));
        }
        Ok((PrototypeBank { c }, tau))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// Row-wise soft assignment: each similarity row becomes a distribution
/// over prototypes, sharper for smaller `tau`. Rows are independent, so
/// several prototypes can co-activate across a batch.
pub fn soft_assign(s: &Tensor, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    Ok(s.scale(1.0 / tau).softmax_rows())
}

/// Sinkhorn-Knopp assignment: alternating normalization pushes exp(S/tau)
/// toward row sums 1 and column sums B/K, forcing balanced prototype
/// usage. The exclusive-assignment baseline that row-wise softmax is
/// measured against.
pub fn sinkhorn_assign(s: &Tensor, tau: f64, iters: usize) -> Result<Tensor> {
    check_tau(tau)?;
    if iters < 1 {
        return Err(Error::InvalidArgument("sinkhorn needs at least one iteration".into()));
    }
    let (b, k) = s.shape();
    // Row-max subtraction only rescales rows, which the row-scaling
    // diagonal absorbs; the iteration target is unchanged.
    let mut q = s.scale(1.0 / tau);
    for i in 0..b {
        let row = &mut q.data[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in row.iter_mut() {
            *v = (*v - m).exp();
        }
    }
    let target_col = b as f64 / k as f64;
    for _ in 0..iters {
        for j in 0..k {
            let sum: f64 = (0..b).map(|i| q.at(i, j)).sum();
            if sum > 0.0 {
                let f = target_col / sum;
                for i in 0..b {
                    *q.at_mut(i, j) *= f;
                }
            }
        }
        for i in 0..b {
            let row = &mut q.data[i * k..(i + 1) * k];
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
    }
    Ok(q)
}

/// Column means of a row-stochastic matrix: overall prototype usage, a
/// distribution over the K prototypes.
pub fn usage(q: &Tensor) -> Tensor {
    q.mean_axis0()
}

/// Shannon entropy of prototype usage with the 1/K prefactor,
/// H = -(1/K) sum p̄_k log p̄_k, taking 0·log 0 = 0.
pub fn assignment_entropy(q: &Tensor) -> f64 {
    raw_usage_entropy(q) / q.cols as f64
}

/// Same entropy without the 1/K scaling; comparable across different K.
pub fn raw_usage_entropy(q: &Tensor) -> f64 {
    let p = usage(q);
    let mut h = 0.0;
    for &v in &p.data {
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    h
}
