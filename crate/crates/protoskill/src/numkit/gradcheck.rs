//! Finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

const EPS: f64 = 1e-4;

/// Runs `f` once with analytic gradients and once per perturbed entry with
/// central differences, returning the worst relative disagreement
/// `|analytic - numeric| / (|numeric| + 1e-8)` over all parameter entries.
///
/// `f` must rebuild its graph from scratch on the tape it is given and
/// register `params` (in order) as leaves itself via the provided handles.
pub fn max_grad_check_error(
    params: &[Tensor],
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).at(0, 0))
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var, &tape);
        for ei in 0..work[pi].data.len() {
            let orig = work[pi].data[ei];
            work[pi].data[ei] = orig + EPS;
            let up = eval(&work)?;
            work[pi].data[ei] = orig - EPS;
            let down = eval(&work)?;
            work[pi].data[ei] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let rel = (analytic.data[ei] - numeric).abs() / (numeric.abs() + 1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
