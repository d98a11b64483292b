//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every forward op appends a node recording its inputs; `backward` walks
//! the tape in reverse accumulating vector-Jacobian products. The op set is
//! exactly what the models in this crate need — no broadcasting rules, no
//! views, no in-place mutation.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Cheap to copy, only valid for the tape
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var),
    SumRows(Var),
    RowNormalize(Var),
    L2NormalizeRows(Var, f64),
    MeanAxis0(Var),
    SumAll(Var),
    MeanAll(Var),
    ConcatRows(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Grads {
    by_node: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient for `v`; zero tensor if the node never received one.
    pub fn get(&self, v: Var, tape: &Tape) -> Tensor {
        match &self.by_node[v.0] {
            Some(g) => g.clone(),
            None => {
                let t = tape.value(v);
                Tensor::zeros(t.rows, t.cols)
            }
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable tensor; gradients flow back to it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a fixed tensor; it blocks gradient flow.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the current value of `v` in as a constant, cutting the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&mut self, value: Tensor, input: Var, op: Op) -> Var {
        let ng = self.needs(input);
        self.push(value, op, ng)
    }

    fn binary(&mut self, value: Tensor, a: Var, b: Var, op: Op) -> Var {
        let ng = self.needs(a) || self.needs(b);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(v, a, b, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        self.unary(v, x, Op::Transpose(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.binary(v, a, b, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.binary(v, a, b, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.binary(v, a, b, Op::Mul(a, b)))
    }

    /// `x + bias` where `bias` is 1xN and broadcasts over the rows of `x`.
    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = self.value(x).add_row_broadcast(self.value(bias))?;
        Ok(self.binary(v, x, bias, Op::AddRowBroadcast(x, bias)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).scale(s);
        self.unary(v, x, Op::Scale(x, s))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).exp();
        self.unary(v, x, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.value(x).ln();
        self.unary(v, x, Op::Ln(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).tanh();
        self.unary(v, x, Op::Tanh(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).softmax_rows();
        self.unary(v, x, Op::SoftmaxRows(x))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).log_softmax_rows();
        self.unary(v, x, Op::LogSoftmaxRows(x))
    }

    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).logsumexp_rows();
        self.unary(v, x, Op::LogSumExpRows(x))
    }

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_rows();
        self.unary(v, x, Op::SumRows(x))
    }

    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).row_normalize()?;
        Ok(self.unary(v, x, Op::RowNormalize(x)))
    }

    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let v = self.value(x).l2_normalize_rows(eps);
        self.unary(v, x, Op::L2NormalizeRows(x, eps))
    }

    pub fn mean_axis0(&mut self, x: Var) -> Var {
        let v = self.value(x).mean_axis0();
        self.unary(v, x, Op::MeanAxis0(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum_all());
        self.unary(v, x, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean_all());
        self.unary(v, x, Op::MeanAll(x))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = Tensor::concat_rows(self.value(a), self.value(b))?;
        Ok(self.binary(v, a, b, Op::ConcatRows(a, b)))
    }

    /// Stacks many vars vertically via a balanced fold of pairwise concats,
    /// keeping intermediate copies O(n log n) instead of O(n²).
    pub fn concat_all(&mut self, vars: &[Var]) -> Result<Var> {
        match vars.len() {
            0 => Err(Error::InvalidArgument("concat_all: no inputs".into())),
            1 => Ok(vars[0]),
            n => {
                let (left, right) = vars.split_at(n / 2);
                let l = self.concat_all(left)?;
                let r = self.concat_all(right)?;
                self.concat_rows(l, r)
            }
        }
    }

    /// Accumulates `delta` into the gradient slot for node `idx`.
    fn accum(grads: &mut [Option<Tensor>], idx: usize, delta: Tensor) {
        match &mut grads[idx] {
            Some(g) => {
                for (gi, di) in g.data.iter_mut().zip(delta.data.iter()) {
                    *gi += di;
                }
            }
            None => grads[idx] = Some(delta),
        }
    }

    /// Reverse pass from a scalar node. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lt = self.value(loss);
        if lt.rows != 1 || lt.cols != 1 {
            return Err(Error::shape(
                "backward",
                "1x1 scalar loss",
                format!("{}x{}", lt.rows, lt.cols),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let out = &self.nodes[idx].value;
            match self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let d = g.matmul(&self.value(b).transpose())?;
                        Self::accum(&mut grads, a.0, d);
                    }
                    if self.needs(b) {
                        let d = self.value(a).transpose().matmul(&g)?;
                        Self::accum(&mut grads, b.0, d);
                    }
                }
                Op::Transpose(x) => {
                    if self.needs(x) {
                        Self::accum(&mut grads, x.0, g.transpose());
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) {
                        Self::accum(&mut grads, a.0, g.clone());
                    }
                    if self.needs(b) {
                        Self::accum(&mut grads, b.0, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(a) {
                        Self::accum(&mut grads, a.0, g.clone());
                    }
                    if self.needs(b) {
                        Self::accum(&mut grads, b.0, g.scale(-1.0));
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        Self::accum(&mut grads, a.0, g.mul(self.value(b))?);
                    }
                    if self.needs(b) {
                        Self::accum(&mut grads, b.0, g.mul(self.value(a))?);
                    }
                }
                Op::AddRowBroadcast(x, bias) => {
                    if self.needs(x) {
                        Self::accum(&mut grads, x.0, g.clone());
                    }
                    if self.needs(bias) {
                        // Bias picks up the column sums of the upstream grad.
                        let mut d = Tensor::zeros(1, g.cols);
                        for i in 0..g.rows {
                            for j in 0..g.cols {
                                d.data[j] += g.at(i, j);
                            }
                        }
                        Self::accum(&mut grads, bias.0, d);
                    }
                }
                Op::Scale(x, s) => {
                    if self.needs(x) {
                        Self::accum(&mut grads, x.0, g.scale(s));
                    }
                }
                Op::Exp(x) => {
                    if self.needs(x) {
                        Self::accum(&mut grads, x.0, g.mul(out)?);
                    }
                }
                Op::Ln(x) => {
                    if self.needs(x) {
                        let inv = self.value(x).map(|v| 1.0 / v);
                        Self::accum(&mut grads, x.0, g.mul(&inv)?);
                    }
                }
                Op::Tanh(x) => {
                    if self.needs(x) {
                        let sech2 = out.map(|y| 1.0 - y * y);
                        Self::accum(&mut grads, x.0, g.mul(&sech2)?);
                    }
                }
                Op::SoftmaxRows(x) => {
                    if self.needs(x) {
                        // dX_i = Y_i * (dY_i - <dY_i, Y_i>)
                        let mut d = Tensor::zeros(out.rows, out.cols);
                        for i in 0..out.rows {
                            let y = out.row(i);
                            let gy = g.row(i);
                            let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                            for j in 0..out.cols {
                                d.data[i * out.cols + j] = y[j] * (gy[j] - dot);
                            }
                        }
                        Self::accum(&mut grads, x.0, d);
                    }
                }
                Op::LogSoftmaxRows(x) => {
                    if self.needs(x) {
                        // dX = dY - softmax(X) * rowsum(dY); softmax = exp(out).
                        let mut d = g.clone();
                        for i in 0..out.rows {
                            let gsum: f64 = g.row(i).iter().sum();
                            for j in 0..out.cols {
                                d.data[i * out.cols + j] -=
                                    out.at(i, j).exp() * gsum;
                            }
                        }
                        Self::accum(&mut grads, x.0, d);
                    }
                }
                Op::LogSumExpRows(x) => {
                    if self.needs(x) {
                        let sm = self.value(x).softmax_rows();
                        let mut d = sm;
                        for i in 0..d.rows {
                            for j in 0..d.cols {
                                d.data[i * d.cols + j] *= g.at(i, 0);
                            }
                        }
                        Self::accum(&mut grads, x.0, d);
                    }
                }
                Op::SumRows(x) => {
                    if self.needs(x) {
                        let xt = self.value(x);
                        let mut d = Tensor::zeros(xt.rows, xt.cols);
                        for i in 0..xt.rows {
                            for j in 0..xt.cols {
                                d.data[i * xt.cols + j] = g.at(i, 0);
                            }
                        }
                        Self::accum(&mut grads, x.0, d);
                    }
                }
                Op::RowNormalize(x) => {
                    if self.needs(x) {
                        // Y = X / s with s the row sum:
                        // dX_ij = (dY_ij - <dY_i, Y_i>) / s_i
                        let xt = self.value(x);
                        let mut d = Tensor::zeros(xt.rows, xt.cols);
                        for i in 0..xt.rows {
                            let s: f64 = xt.row(i).iter().sum();
                            let dot: f64 = g
                                .row(i)
                                .iter()
                                .zip(out.row(i))
                                .map(|(a, b)| a * b)
                                .sum();
                            for j in 0..xt.cols {
                                d.data[i * xt.cols + j] = (g.at(i, j) - dot) / s;
                            }
                        }
                        Self::accum(&mut grads, x.0, d);
                    }
                }
                Op::L2NormalizeRows(x, eps) => {
                    if self.needs(x) {
                        let xt = self.value(x);
                        let mut d = Tensor::zeros(xt.rows, xt.cols);
                        for i in 0..xt.rows {
                            let norm =
                                xt.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                            if norm <= eps {
                                // Clamped branch: Y = X / eps is linear.
                                for j in 0..xt.cols {
                                    d.data[i * xt.cols + j] = g.at(i, j) / eps;
                                }
                            } else {
                                let dot: f64 = g
                                    .row(i)
                                    .iter()
                                    .zip(out.row(i))
                                    .map(|(a, b)| a * b)
                                    .sum();
                                for j in 0..xt.cols {
                                    d.data[i * xt.cols + j] =
                                        (g.at(i, j) - out.at(i, j) * dot) / norm;
                                }
                            }
                        }
                        Self::accum(&mut grads, x.0, d);
                    }
                }
                Op::MeanAxis0(x) => {
                    if self.needs(x) {
                        let xt = self.value(x);
                        let inv = 1.0 / xt.rows as f64;
                        let mut d = Tensor::zeros(xt.rows, xt.cols);
                        for i in 0..xt.rows {
                            for j in 0..xt.cols {
                                d.data[i * xt.cols + j] = g.at(0, j) * inv;
                            }
                        }
                        Self::accum(&mut grads, x.0, d);
                    }
                }
                Op::SumAll(x) => {
                    if self.needs(x) {
                        let xt = self.value(x);
                        let d = Tensor::full(xt.rows, xt.cols, g.at(0, 0));
                        Self::accum(&mut grads, x.0, d);
                    }
                }
                Op::MeanAll(x) => {
                    if self.needs(x) {
                        let xt = self.value(x);
                        let v = g.at(0, 0) / (xt.rows * xt.cols) as f64;
                        let d = Tensor::full(xt.rows, xt.cols, v);
                        Self::accum(&mut grads, x.0, d);
                    }
                }
                Op::ConcatRows(a, b) => {
                    let top_rows = self.value(a).rows;
                    if self.needs(a) {
                        let da = Tensor {
                            rows: top_rows,
                            cols: g.cols,
                            data: g.data[..top_rows * g.cols].to_vec(),
                        };
                        Self::accum(&mut grads, a.0, da);
                    }
                    if self.needs(b) {
                        let db = Tensor {
                            rows: g.rows - top_rows,
                            cols: g.cols,
                            data: g.data[top_rows * g.cols..].to_vec(),
                        };
                        Self::accum(&mut grads, b.0, db);
                    }
                }
            }
            // Interior node: grad no longer needed once distributed.
        }
        Ok(Grads { by_node: grads })
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::max_grad_check_error;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-4;

    fn randn(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(rows, cols, 1.0, &mut rng)
    }

    #[test]
    fn grad_matmul_chain() {
        let a = randn(3, 4, 1);
        let b = randn(4, 2, 2);
        let err = max_grad_check_error(&[a, b], |t, vs| {
            let p = t.matmul(vs[0], vs[1])?;
            let q = t.mul(p, p)?;
            Ok(t.mean_all(q))
        })
        .unwrap();
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn grad_tanh_affine() {
        let w = randn(4, 3, 3);
        let b = randn(1, 3, 4);
        let x = randn(5, 4, 5);
        let err = max_grad_check_error(&[w, b, x], |t, vs| {
            let h = t.matmul(vs[2], vs[0])?;
            let h = t.add_row_broadcast(h, vs[1])?;
            let h = t.tanh(h);
            Ok(t.mean_all(h))
        })
        .unwrap();
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn grad_softmax_rows() {
        let x = randn(4, 6, 6);
        let tgt = randn(4, 6, 7).softmax_rows();
        let err = max_grad_check_error(&[x], move |t, vs| {
            let s = t.softmax_rows(vs[0]);
            let c = t.constant(tgt.clone());
            let d = t.sub(s, c)?;
            let d2 = t.mul(d, d)?;
            Ok(t.mean_all(d2))
        })
        .unwrap();
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn grad_log_softmax_cross_entropy() {
        let x = randn(5, 7, 8);
        let q = randn(5, 7, 9).softmax_rows();
        let err = max_grad_check_error(&[x], move |t, vs| {
            let lp = t.log_softmax_rows(vs[0]);
            let qc = t.constant(q.clone());
            let prod = t.mul(qc, lp)?;
            let s = t.sum_all(prod);
            Ok(t.scale(s, -1.0 / 5.0))
        })
        .unwrap();
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn grad_logsumexp_rows() {
        let x = randn(3, 5, 10);
        let err = max_grad_check_error(&[x], |t, vs| {
            let l = t.logsumexp_rows(vs[0]);
            Ok(t.mean_all(l))
        })
        .unwrap();
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn grad_row_normalize() {
        // Keep inputs positive so the row sums stay well away from zero.
        let x = randn(3, 4, 11).map(|v| v.abs() + 0.5);
        let w = randn(3, 4, 12);
        let err = max_grad_check_error(&[x], move |t, vs| {
            let n = t.row_normalize(vs[0])?;
            let wc = t.constant(w.clone());
            let p = t.mul(n, wc)?;
            Ok(t.sum_all(p))
        })
        .unwrap();
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn grad_l2_normalize_rows() {
        let x = randn(4, 5, 13);
        let w = randn(4, 5, 14);
        let err = max_grad_check_error(&[x], move |t, vs| {
            let n = t.l2_normalize_rows(vs[0], 1e-12);
            let wc = t.constant(w.clone());
            let p = t.mul(n, wc)?;
            Ok(t.mean_all(p))
        })
        .unwrap();
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn grad_exp_ln_scale() {
        let x = randn(3, 3, 15).map(|v| v.abs() + 0.2);
        let err = max_grad_check_error(&[x], |t, vs| {
            let e = t.exp(vs[0]);
            let l = t.ln(e);
            let s = t.scale(l, 0.7);
            Ok(t.mean_all(s))
        })
        .unwrap();
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn grad_mean_axis0_and_entropy_like() {
        let x = randn(6, 4, 16);
        let err = max_grad_check_error(&[x], |t, vs| {
            let p = t.softmax_rows(vs[0]);
            let m = t.mean_axis0(p);
            let lm = t.ln(m);
            let prod = t.mul(m, lm)?;
            let s = t.sum_all(prod);
            Ok(t.scale(s, -1.0))
        })
        .unwrap();
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn grad_concat_rows_splits_upstream() {
        let a = randn(2, 3, 17);
        let b = randn(3, 3, 18);
        let w = randn(5, 3, 19);
        let err = max_grad_check_error(&[a, b], move |t, vs| {
            let c = t.concat_rows(vs[0], vs[1])?;
            let wc = t.constant(w.clone());
            let p = t.mul(c, wc)?;
            Ok(t.mean_all(p))
        })
        .unwrap();
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn grad_transpose_and_sum_rows() {
        let x = randn(3, 4, 20);
        let w = randn(4, 1, 21);
        let err = max_grad_check_error(&[x], move |t, vs| {
            let xt = t.transpose(vs[0]);
            let sr = t.sum_rows(xt);
            let wc = t.constant(w.clone());
            let p = t.mul(sr, wc)?;
            Ok(t.sum_all(p))
        })
        .unwrap();
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn grad_sub_and_square_error() {
        let a = randn(4, 4, 22);
        let b = randn(4, 4, 23);
        let err = max_grad_check_error(&[a, b], |t, vs| {
            let d = t.sub(vs[0], vs[1])?;
            let d2 = t.mul(d, d)?;
            Ok(t.mean_all(d2))
        })
        .unwrap();
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(3.0));
        let p = tape.mul(x, c).unwrap();
        let loss = tape.sum_all(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x, &tape).at(0, 0), 3.0);
        assert_eq!(grads.get(c, &tape).at(0, 0), 0.0);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.mul(x, x).unwrap();
        let stopped = tape.detach(y);
        let z = tape.mul(x, stopped).unwrap();
        let loss = tape.sum_all(z);
        let grads = tape.backward(loss).unwrap();
        // z = x * stop(x^2): d/dx = stop(x^2) = 4, not 3x^2 = 12.
        assert_eq!(grads.get(x, &tape).at(0, 0), 4.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn grad_accumulates_over_reuse() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x, &tape).at(0, 0), 2.0);
    }
}
