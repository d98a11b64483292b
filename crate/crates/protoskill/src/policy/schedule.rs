//! Noise schedule and the closed-form forward noising process.

use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// Diffusion noise schedule: per-step noise fractions and their running
/// products. Step indices are 1-based, matching the chain a_1..a_H.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Cumulative products of alpha; strictly decreasing.
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(h: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
        if h < 1 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(Error::InvalidArgument(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..h)
            .map(|i| {
                if h == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (h as f64 - 1.0)
                }
            })
            .collect();
        NoiseSchedule::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<NoiseSchedule> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("empty beta list".into()));
        }
        if betas.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::InvalidArgument("betas must be non-decreasing".into()));
        }
        if betas.iter().any(|&b| !(0.0 < b && b < 1.0)) {
            return Err(Error::InvalidArgument("betas must lie in (0,1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        if alpha_bars.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::InvalidArgument("cumulative alphas must strictly decrease".into()));
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn check_step(&self, h: usize) -> Result<()> {
        if h < 1 || h > self.len() {
            return Err(Error::InvalidArgument(format!(
                "diffusion step {h} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, h: usize) -> Result<f64> {
        self.check_step(h)?;
        Ok(self.betas[h - 1])
    }

    pub fn alpha(&self, h: usize) -> Result<f64> {
        self.check_step(h)?;
        Ok(self.alphas[h - 1])
    }

    pub fn alpha_bar(&self, h: usize) -> Result<f64> {
        self.check_step(h)?;
        Ok(self.alpha_bars[h - 1])
    }
}

/// Jump straight to noise level `h`:
/// a_h = sqrt(ᾱ_h)·a0 + sqrt(1−ᾱ_h)·noise.
pub fn forward_diffuse(
    a0: &Tensor,
    h: usize,
    schedule: &NoiseSchedule,
    noise: &Tensor,
) -> Result<Tensor> {
    if !a0.same_shape(noise) {
        return Err(Error::shape(
            "forward_diffuse",
            format!("{}x{}", a0.rows, a0.cols),
            format!("{}x{}", noise.rows, noise.cols),
        ));
    }
    let ab = schedule.alpha_bar(h)?;
    Ok(a0.scale(ab.sqrt()).add(&noise.scale((1.0 - ab).sqrt()))?)
}
