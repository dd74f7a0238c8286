//! Linear DDPM noise schedule.
//!
//! Timesteps are 1-based (`t ∈ 1..=T`) at every public entry point and
//! 0-based in the stored arrays; the conversion happens only here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma2: Vec<f64>,
}

impl NoiseSchedule {
    /// `β_t = (t/T)·β_max + (1 − t/T)·β_min` for `t = 1..=T`, with
    /// `ᾱ_0 = 1` so that `σ_1² = 0`.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Parameter("schedule needs T >= 1".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Parameter(format!(
                "schedule needs 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        let total = steps as f64;
        let beta: Vec<f64> = (1..=steps)
            .map(|t| {
                if t == steps {
                    beta_max
                } else {
                    // Same line as (t/T)·β_max + (1 − t/T)·β_min, written so
                    // rounding cannot break monotonicity.
                    (beta_min + (t as f64 / total) * (beta_max - beta_min)).min(beta_max)
                }
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut running = 1.0;
        for a in &alpha {
            running *= a;
            alpha_bar.push(running);
        }
        let sigma2 = (0..steps)
            .map(|i| {
                if i == 0 {
                    0.0
                } else {
                    (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]) * beta[i]
                }
            })
            .collect();
        Ok(NoiseSchedule {
            steps,
            beta,
            alpha,
            alpha_bar,
            sigma2,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps {
            Err(Error::Index(format!("timestep {t} outside 1..={}", self.steps)))
        } else {
            Ok(t - 1)
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t)?])
    }

    pub fn sigma2(&self, t: usize) -> Result<f64> {
        Ok(self.sigma2[self.index(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigma2s(&self) -> &[f64] {
        &self.sigma2
    }

    /// `x_t = √ᾱ_t·x0 + √(1 − ᾱ_t)·ε`, elementwise.
    pub fn forward_marginal<T: Scalar>(&self, x0: &[T], t: usize, eps: &[T]) -> Result<Vec<T>> {
        if x0.len() != eps.len() {
            return Err(Error::Dimension(format!(
                "forward_marginal: x0 has {} entries, eps has {}",
                x0.len(),
                eps.len()
            )));
        }
        let ab = self.alpha_bar(t)?;
        let (a, b) = (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()));
        Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
    }
}
