//! Dense row-major f64 matrices.
//!
//! Everything in this crate is small enough (hundreds of rows, tens of
//! columns) that a flat `Vec<f64>` with explicit loops beats pulling in a
//! BLAS binding. All ops allocate their output; nothing aliases.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A `rows x cols` matrix. Scalars are 1x1, row vectors are 1xN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::full(1, 1, value)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("{} values for {}x{}", rows * cols, rows, cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("from_rows: no rows".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape(
                    "from_rows",
                    format!("row of length {cols}"),
                    format!("row of length {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            })
            .collect();
        Tensor { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(op, self.shape_str(), other.shape_str()));
        }
        Ok(())
    }

    /// Matrix product, i-k-j loop order so the inner loop walks both
    /// operands contiguously.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("lhs cols == rhs rows ({})", self.cols),
                other.shape_str(),
            ));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other, "mul")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    /// Adds a 1xN row vector to every row of an MxN matrix.
    pub fn add_row_broadcast(&self, row: &Tensor) -> Result<Tensor> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::shape(
                "add_row_broadcast",
                format!("1x{}", self.cols),
                row.shape_str(),
            ));
        }
        let mut out = self.clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                out.data[i * out.cols + j] += row.data[j];
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    pub fn ln(&self) -> Tensor {
        self.map(f64::ln)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Row-wise softmax with max subtraction, so large logits stay finite.
    pub fn softmax_rows(&self) -> Tensor {
        let mut out = self.clone();
        for i in 0..self.rows {
            let r = &mut out.data[i * self.cols..(i + 1) * self.cols];
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in r.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            for v in r.iter_mut() {
                *v /= sum;
            }
        }
        out
    }

    pub fn log_softmax_rows(&self) -> Tensor {
        let lse = self.logsumexp_rows();
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] -= lse.data[i];
            }
        }
        out
    }

    /// Per-row log(sum(exp(x))), returned as Mx1.
    pub fn logsumexp_rows(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows, 1);
        for i in 0..self.rows {
            let r = self.row(i);
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = r.iter().map(|&v| (v - m).exp()).sum();
            out.data[i] = m + s.ln();
        }
        out
    }

    /// Per-row sum, returned as Mx1.
    pub fn sum_rows(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows, 1);
        for i in 0..self.rows {
            out.data[i] = self.row(i).iter().sum();
        }
        out
    }

    /// Divides each row by its sum. Rejects non-positive entries instead of
    /// clamping: callers are expected to exponentiate first, so anything
    /// else is a bug upstream and should surface loudly.
    pub fn row_normalize(&self) -> Result<Tensor> {
        let mut out = self.clone();
        for i in 0..self.rows {
            let r = &mut out.data[i * self.cols..(i + 1) * self.cols];
            if r.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "row_normalize: row {i} has a non-positive or non-finite entry"
                )));
            }
            let s: f64 = r.iter().sum();
            if !s.is_finite() {
                return Err(Error::NonFinite("row_normalize"));
            }
            for v in r.iter_mut() {
                *v /= s;
            }
        }
        Ok(out)
    }

    /// Scales each row to unit L2 norm. Rows below `eps` norm pass through
    /// with the norm clamped, so zero rows stay zero instead of NaN.
    pub fn l2_normalize_rows(&self, eps: f64) -> Tensor {
        let mut out = self.clone();
        for i in 0..self.rows {
            let r = &mut out.data[i * self.cols..(i + 1) * self.cols];
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            for v in r.iter_mut() {
                *v /= n;
            }
        }
        out
    }

    /// Column means, returned as 1xN.
    pub fn mean_axis0(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j] += self.data[i * self.cols + j];
            }
        }
        let inv = 1.0 / self.rows as f64;
        for v in out.data.iter_mut() {
            *v *= inv;
        }
        out
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean_all(&self) -> f64 {
        self.sum_all() / self.data.len() as f64
    }

    /// Stacks `a` on top of `b`; column counts must match.
    pub fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.cols != b.cols {
            return Err(Error::shape(
                "concat_rows",
                format!("{} cols", a.cols),
                format!("{} cols", b.cols),
            ));
        }
        let mut data = Vec::with_capacity((a.rows + b.rows) * a.cols);
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Tensor {
            rows: a.rows + b.rows,
            cols: a.cols,
            data,
        })
    }

    /// Index of the largest entry in row `i`; ties break low.
    pub fn argmax_row(&self, i: usize) -> usize {
        let r = self.row(i);
        let mut best = 0;
        for (j, &v) in r.iter().enumerate() {
            if v > r[best] {
                best = j;
            }
        }
        best
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Scaled dot-product attention: `softmax_rows(Q·Kᵀ/tau + mask) · V`.
///
/// `mask` is an additive bias on the score matrix (use large negatives to
/// exclude key positions). Inference-path only; the differentiable version
/// is composed from tape ops where it is trained.
pub fn attention(
    queries: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    tau: f64,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "attention: tau must be positive and finite, got {tau}"
        )));
    }
    if queries.cols != keys.cols {
        return Err(Error::shape(
            "attention",
            format!("queries {}x{} vs keys {}xd with matching d", queries.rows, queries.cols, keys.rows),
            format!("keys {}x{}", keys.rows, keys.cols),
        ));
    }
    if keys.rows != values.rows {
        return Err(Error::shape(
            "attention",
            format!("{} values (one per key)", keys.rows),
            format!("{} values", values.rows),
        ));
    }
    let mut scores = queries.matmul(&keys.transpose())?.scale(1.0 / tau);
    if let Some(m) = mask {
        scores = scores.add(m)?;
    }
    scores.softmax_rows().matmul(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    #[test]
    fn matmul_matches_dot_product_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::randn(5, 4, 1.0, &mut rng);
        let b = Tensor::randn(4, 3, 1.0, &mut rng);
        let c = a.matmul(&b).unwrap();
        // Independent i-j-k evaluation straight from the definition.
        for i in 0..5 {
            for j in 0..3 {
                let mut dot = 0.0;
                for p in 0..4 {
                    dot += a.at(i, p) * b.at(p, j);
                }
                assert_close(c.at(i, j), dot, 1e-12);
            }
        }
    }

    #[test]
    fn matmul_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Tensor::randn(3, 3, 1.0, &mut rng);
        let mut eye = Tensor::zeros(3, 3);
        for i in 0..3 {
            *eye.at_mut(i, i) = 1.0;
        }
        let p = a.matmul(&eye).unwrap();
        for (x, y) in p.data.iter().zip(a.data.iter()) {
            assert_close(*x, *y, 1e-15);
        }
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn transpose_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Tensor::randn(4, 7, 1.0, &mut rng);
        let tt = a.transpose().transpose();
        assert_eq!(a, tt);
        assert_close(a.at(2, 5), a.transpose().at(5, 2), 0.0 + 1e-15);
    }

    #[test]
    fn softmax_rows_matches_exp_over_sum() {
        // Direct exp/sum evaluation, no max subtraction, on small logits.
        let x = Tensor::from_vec(2, 3, vec![0.1, -0.4, 0.7, 1.0, 1.0, 1.0]).unwrap();
        let s = x.softmax_rows();
        for i in 0..2 {
            let denom: f64 = x.row(i).iter().map(|v| v.exp()).sum();
            for j in 0..3 {
                assert_close(s.at(i, j), x.at(i, j).exp() / denom, 1e-12);
            }
            assert_close(s.row(i).iter().sum::<f64>(), 1.0, 1e-12);
        }
    }

    #[test]
    fn softmax_rows_survives_large_logits() {
        let x = Tensor::from_vec(1, 3, vec![1000.0, 1001.0, 999.0]).unwrap();
        let s = x.softmax_rows();
        assert!(s.is_finite());
        assert_close(s.data.iter().sum::<f64>(), 1.0, 1e-12);
        assert!(s.at(0, 1) > s.at(0, 0) && s.at(0, 0) > s.at(0, 2));
    }

    #[test]
    fn logsumexp_matches_direct_log_sum() {
        let x = Tensor::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
        let l = x.logsumexp_rows();
        let direct0 = (0.5f64.exp() + (-1.0f64).exp() + 2.0f64.exp()).ln();
        assert_close(l.at(0, 0), direct0, 1e-12);
        assert_close(l.at(1, 0), 3.0f64.ln(), 1e-12);
    }

    #[test]
    fn log_softmax_is_log_of_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::randn(3, 5, 2.0, &mut rng);
        let a = x.log_softmax_rows();
        let b = x.softmax_rows().ln();
        for (u, v) in a.data.iter().zip(b.data.iter()) {
            assert_close(*u, *v, 1e-10);
        }
    }

    #[test]
    fn row_normalize_sums_to_one() {
        let x = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 4.0, 4.0]).unwrap();
        let n = x.row_normalize().unwrap();
        assert_close(n.at(0, 0), 1.0 / 6.0, 1e-12);
        assert_close(n.at(0, 2), 3.0 / 6.0, 1e-12);
        for i in 0..2 {
            assert_close(n.row(i).iter().sum::<f64>(), 1.0, 1e-12);
        }
    }

    #[test]
    fn row_normalize_rejects_zero_rows() {
        let x = Tensor::zeros(2, 3);
        assert!(x.row_normalize().is_err());
    }

    #[test]
    fn row_normalize_rejects_any_nonpositive_entry() {
        // Even when the row sum is fine, a single bad entry must fail.
        let x = Tensor::from_vec(1, 3, vec![5.0, -1.0, 2.0]).unwrap();
        assert!(x.row_normalize().is_err());
        let y = Tensor::from_vec(1, 3, vec![5.0, 0.0, 2.0]).unwrap();
        assert!(y.row_normalize().is_err());
        let z = Tensor::from_vec(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(z.row_normalize().is_err());
    }

    #[test]
    fn row_normalize_single_column_is_all_ones() {
        let x = Tensor::from_vec(3, 1, vec![0.2, 7.0, 1e-6]).unwrap();
        let n = x.row_normalize().unwrap();
        for i in 0..3 {
            assert_close(n.at(i, 0), 1.0, 1e-15);
        }
    }

    #[test]
    fn softmax_entropy_grows_with_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let x = Tensor::randn(4, 6, 1.5, &mut rng);
            let mut prev = -1.0;
            for tau in [0.05, 0.1, 0.5, 1.0, 5.0] {
                let s = x.scale(1.0 / tau).softmax_rows();
                let mut h = 0.0;
                for i in 0..s.rows {
                    for &p in s.row(i) {
                        if p > 0.0 {
                            h -= p * p.ln();
                        }
                    }
                }
                h /= s.rows as f64;
                assert!(h >= prev - 1e-12, "entropy dropped: {prev} -> {h} at tau={tau}");
                prev = h;
            }
        }
    }

    #[test]
    fn attention_singleton_key_returns_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = Tensor::randn(3, 4, 1.0, &mut rng);
        let k = Tensor::randn(1, 4, 1.0, &mut rng);
        let v = Tensor::from_vec(1, 2, vec![2.5, -7.0]).unwrap();
        let out = attention(&q, &k, &v, 1.0, None).unwrap();
        assert_eq!(out.shape(), (3, 2));
        for i in 0..3 {
            assert_close(out.at(i, 0), 2.5, 1e-12);
            assert_close(out.at(i, 1), -7.0, 1e-12);
        }
    }

    #[test]
    fn attention_sharp_temperature_selects_matching_key() {
        // Orthonormal keys, query = second key, tau small: the second
        // value should dominate.
        let k = Tensor::from_vec(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let q = Tensor::from_vec(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let v = Tensor::from_vec(3, 2, vec![1.0, 1.0, 5.0, -5.0, 9.0, 9.0]).unwrap();
        let out = attention(&q, &k, &v, 0.01, None).unwrap();
        assert_close(out.at(0, 0), 5.0, 1e-6);
        assert_close(out.at(0, 1), -5.0, 1e-6);
    }

    #[test]
    fn attention_matches_explicit_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let q = Tensor::randn(2, 3, 1.0, &mut rng);
        let k = Tensor::randn(4, 3, 1.0, &mut rng);
        let v = Tensor::randn(4, 5, 1.0, &mut rng);
        let mask = Tensor::randn(2, 4, 0.5, &mut rng);
        let tau = 0.7;
        let out = attention(&q, &k, &v, tau, Some(&mask)).unwrap();
        // Independent evaluation: raw exp weights, then weighted value sum.
        for i in 0..2 {
            let scores: Vec<f64> = (0..4)
                .map(|p| {
                    let dot: f64 = (0..3).map(|d| q.at(i, d) * k.at(p, d)).sum();
                    dot / tau + mask.at(i, p)
                })
                .collect();
            let denom: f64 = scores.iter().map(|s| s.exp()).sum();
            for j in 0..5 {
                let expect: f64 = (0..4).map(|p| scores[p].exp() / denom * v.at(p, j)).sum();
                assert_close(out.at(i, j), expect, 1e-10);
            }
        }
    }

    #[test]
    fn attention_rejects_bad_arguments() {
        let q = Tensor::zeros(2, 3);
        let k = Tensor::zeros(4, 3);
        let v = Tensor::zeros(4, 2);
        assert!(attention(&q, &k, &v, 0.0, None).is_err());
        assert!(attention(&q, &k, &v, -1.0, None).is_err());
        let k_bad = Tensor::zeros(4, 2);
        assert!(attention(&q, &k_bad, &v, 1.0, None).is_err());
        let v_bad = Tensor::zeros(3, 2);
        assert!(attention(&q, &k, &v_bad, 1.0, None).is_err());
        let mask_bad = Tensor::zeros(2, 3);
        assert!(attention(&q, &k, &v, 1.0, Some(&mask_bad)).is_err());
    }

    #[test]
    fn l2_normalize_rows_unit_norm() {
        let x = Tensor::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        let n = x.l2_normalize_rows(1e-12);
        assert_close(n.at(0, 0), 0.6, 1e-12);
        assert_close(n.at(0, 1), 0.8, 1e-12);
        // Zero rows stay zero.
        let z = Tensor::zeros(1, 2).l2_normalize_rows(1e-12);
        assert_eq!(z.data, vec![0.0, 0.0]);
    }

    #[test]
    fn mean_axis0_is_column_mean() {
        let x = Tensor::from_vec(2, 2, vec![1.0, 10.0, 3.0, 20.0]).unwrap();
        let m = x.mean_axis0();
        assert_eq!(m.shape(), (1, 2));
        assert_close(m.at(0, 0), 2.0, 1e-12);
        assert_close(m.at(0, 1), 15.0, 1e-12);
    }

    #[test]
    fn concat_rows_stacks() {
        let a = Tensor::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = Tensor::concat_rows(&a, &b).unwrap();
        assert_eq!(c.shape(), (3, 2));
        assert_eq!(c.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn add_row_broadcast_adds_to_every_row() {
        let x = Tensor::zeros(2, 3);
        let b = Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.add_row_broadcast(&b).unwrap();
        assert_eq!(y.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(y.row(1), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn randn_is_deterministic_per_seed() {
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let a = Tensor::randn(3, 3, 0.5, &mut r1);
        let b = Tensor::randn(3, 3, 0.5, &mut r2);
        assert_eq!(a, b);
    }
}
