//! Fully-connected network with tanh hidden activations.
//!
//! tanh is the only nonlinearity in this crate: it is smooth everywhere, so
//! every gradient path stays finite-difference checkable (no kinks like
//! relu at zero that foil central differences).

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

/// `dims = [in, h1, ..., out]`; tanh after every layer except the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Tape handles for one binding of an [`Mlp`]'s parameters.
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
}

impl Mlp {
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Result<Mlp> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "mlp needs at least input and output dims".into(),
            ));
        }
        let mut layers = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            // Xavier-style scaling keeps tanh pre-activations in its
            // linear-ish region at init.
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            layers.push(Dense {
                w: Tensor::randn(fan_in, fan_out, std, rng),
                b: Tensor::zeros(1, fan_out),
            });
        }
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.rows
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().w.cols
    }

    /// Registers all parameters as trainable leaves on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.w.clone()), tape.leaf(l.b.clone())))
                .collect(),
        }
    }

    /// Registers all parameters as constants (no gradient).
    pub fn bind_frozen(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.constant(l.w.clone()), tape.constant(l.b.clone())))
                .collect(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var> {
        let mut h = x;
        let last = vars.layers.len() - 1;
        for (li, (w, b)) in vars.layers.iter().enumerate() {
            h = tape.matmul(h, *w)?;
            h = tape.add_row_broadcast(h, *b)?;
            if li != last {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Forward pass without a tape, for inference paths.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            h = h.matmul(&l.w)?.add_row_broadcast(&l.b)?;
            if li != last {
                h = h.tanh();
            }
        }
        Ok(h)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    /// Named views for checkpointing, `prefix.lN.{w,b}`.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.l{i}.w"), &l.w),
                    (format!("{prefix}.l{i}.b"), &l.b),
                ]
            })
            .collect()
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.l{i}.w"), &mut l.w),
                    (format!("{prefix}.l{i}.b"), &mut l.b),
                ]
            })
            .collect()
    }
}

impl MlpVars {
    /// Assembles a binding from existing tape vars, `[(w, b); layers]`.
    pub fn from_pairs(layers: Vec<(Var, Var)>) -> MlpVars {
        MlpVars { layers }
    }

    /// Gradients in the same order as [`Mlp::params_mut`].
    pub fn grads(&self, grads: &super::tape::Grads, tape: &Tape) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [grads.get(*w, tape), grads.get(*b, tape)])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::max_grad_check_error;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[6, 8, 3], &mut rng).unwrap();
        let x = Tensor::randn(5, 6, 1.0, &mut rng);
        let y = mlp.infer(&x).unwrap();
        assert_eq!(y.shape(), (5, 3));
        assert!(y.is_finite());
    }

    #[test]
    fn tape_forward_matches_infer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::new(&[4, 5, 2], &mut rng).unwrap();
        let x = Tensor::randn(3, 4, 1.0, &mut rng);
        let direct = mlp.infer(&x).unwrap();

        let mut tape = Tape::new();
        let vars = mlp.bind(&mut tape);
        let xv = tape.constant(x);
        let y = mlp.forward(&mut tape, &vars, xv).unwrap();
        let taped = tape.value(y);
        for (a, b) in direct.data.iter().zip(taped.data.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn full_network_gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[3, 6, 2], &mut rng).unwrap();
        let x = Tensor::randn(4, 3, 1.0, &mut rng);
        let target = Tensor::randn(4, 2, 1.0, &mut rng);

        let flat: Vec<Tensor> = mlp.params().into_iter().cloned().collect();
        let dims = [3usize, 6, 2];
        let err = max_grad_check_error(&flat, move |tape, vs| {
            // Rebuild the same architecture from the flat parameter list.
            let mut h = tape.constant(x.clone());
            let last = dims.len() - 2;
            for li in 0..dims.len() - 1 {
                h = tape.matmul(h, vs[2 * li])?;
                h = tape.add_row_broadcast(h, vs[2 * li + 1])?;
                if li != last {
                    h = tape.tanh(h);
                }
            }
            let tc = tape.constant(target.clone());
            let d = tape.sub(h, tc)?;
            let d2 = tape.mul(d, d)?;
            Ok(tape.mean_all(d2))
        })
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn rejects_single_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(Mlp::new(&[5], &mut rng).is_err());
    }
}
