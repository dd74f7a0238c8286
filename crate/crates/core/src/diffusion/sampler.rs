//! Ancestral sampling `x_{t−1} = μ_θ(x_t, e, t) + σ_t·z`.

use crate::error::{Error, Result};
use crate::model::ModelParameters;
use crate::numerics::{RngStream, Scalar};
use crate::schedule::NoiseSchedule;

/// Anything that predicts the noise in a batch of corrupted profiles.
pub trait NoisePredictor<T> {
    fn genes(&self) -> usize;

    fn cond_dim(&self) -> usize;

    /// `x_t` is `[B, genes]`, `cond` is `[B, cond_dim]`; returns `[B, genes]`.
    fn predict(&self, x_t: &[T], ts: &[usize], cond: &[T]) -> Result<Vec<T>>;
}

impl<T: Scalar> NoisePredictor<T> for ModelParameters<T> {
    fn genes(&self) -> usize {
        self.config().genes
    }

    fn cond_dim(&self) -> usize {
        self.config().cond_dim
    }

    fn predict(&self, x_t: &[T], ts: &[usize], cond: &[T]) -> Result<Vec<T>> {
        ModelParameters::predict(self, x_t, ts, cond)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerOptions {
    /// Multiplies `σ_t`; `0` makes every step deterministic given `x_T`.
    pub noise_scale: f64,
    /// Chains evaluated per network call.
    pub chunk: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            noise_scale: 1.0,
            chunk: 256,
        }
    }
}

/// `n` chains for a single condition. Chain `j` draws from `rng.derive(0).derive(j)`,
/// matching spot 0 of [`sample_spots`].
pub fn sample<T: Scalar, P: NoisePredictor<T> + ?Sized>(
    predictor: &P,
    cond: &[T],
    n: usize,
    schedule: &NoiseSchedule,
    rng: &RngStream,
    options: SamplerOptions,
) -> Result<Vec<T>> {
    let mut out = sample_spots(predictor, &[cond.to_vec()], n, schedule, rng, options)?;
    Ok(out.pop().expect("one spot"))
}

/// `n` chains per spot; returns one row-major `[n, genes]` matrix per spot.
///
/// Chain `j` of spot `s` owns the stream `rng.derive(s).derive(j)`: it draws
/// `x_T` first, then one `z` per step for `t ≥ 2`. Results therefore do not
/// depend on how chains are grouped into network calls.
pub fn sample_spots<T: Scalar, P: NoisePredictor<T> + ?Sized>(
    predictor: &P,
    conds: &[Vec<T>],
    n: usize,
    schedule: &NoiseSchedule,
    rng: &RngStream,
    options: SamplerOptions,
) -> Result<Vec<Vec<T>>> {
    if n == 0 {
        return Err(Error::Parameter("sampler needs n >= 1".into()));
    }
    let genes = predictor.genes();
    let cond_dim = predictor.cond_dim();
    if let Some(bad) = conds.iter().find(|c| c.len() != cond_dim) {
        return Err(Error::Condition(format!(
            "condition of length {}, expected {cond_dim}",
            bad.len()
        )));
    }
    let jobs: Vec<(usize, usize)> = (0..conds.len())
        .flat_map(|s| (0..n).map(move |j| (s, j)))
        .collect();
    let mut out: Vec<Vec<T>> = vec![vec![T::zero(); n * genes]; conds.len()];
    for group in jobs.chunks(options.chunk.max(1)) {
        let mut streams: Vec<RngStream> = group
            .iter()
            .map(|&(s, j)| rng.derive(s as u64).derive(j as u64))
            .collect();
        let mut cond = Vec::with_capacity(group.len() * cond_dim);
        for &(s, _) in group {
            cond.extend_from_slice(&conds[s]);
        }
        let mut x = vec![T::zero(); group.len() * genes];
        for (row, stream) in x.chunks_exact_mut(genes).zip(&mut streams) {
            stream.fill_normal(row);
        }
        run_chain(predictor, &mut x, &cond, &mut streams, schedule, options.noise_scale)?;
        for (row, &(s, j)) in x.chunks_exact(genes).zip(group) {
            out[s][j * genes..(j + 1) * genes].copy_from_slice(row);
        }
    }
    Ok(out)
}

fn run_chain<T: Scalar, P: NoisePredictor<T> + ?Sized>(
    predictor: &P,
    x: &mut [T],
    cond: &[T],
    streams: &mut [RngStream],
    schedule: &NoiseSchedule,
    noise_scale: f64,
) -> Result<()> {
    let genes = predictor.genes();
    let batch = streams.len();
    let mut z = vec![T::zero(); genes];
    for t in (1..=schedule.steps()).rev() {
        let ts = vec![t; batch];
        let eps = predictor.predict(x, &ts, cond)?;
        let alpha = schedule.alpha(t)?;
        let coef = schedule.beta(t)? / (1.0 - schedule.alpha_bar(t)?).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let sigma = schedule.sigma2(t)?.sqrt() * noise_scale;
        for ((row, eps_row), stream) in x
            .chunks_exact_mut(genes)
            .zip(eps.chunks_exact(genes))
            .zip(streams.iter_mut())
        {
            if t >= 2 {
                stream.fill_normal(&mut z);
            }
            for (g, (xv, &ev)) in row.iter_mut().zip(eps_row).enumerate() {
                let xf = xv.to_f64().unwrap_or(f64::NAN);
                let ef = ev.to_f64().unwrap_or(f64::NAN);
                let mut next = inv_sqrt_alpha * (xf - coef * ef);
                if t >= 2 {
                    next += sigma * z[g].to_f64().unwrap_or(0.0);
                }
                if !next.is_finite() {
                    return Err(Error::Numeric(format!(
                        "sampler state became non-finite at t = {t}"
                    )));
                }
                *xv = T::lit(next);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero {
        genes: usize,
    }

    impl NoisePredictor<f64> for Zero {
        fn genes(&self) -> usize {
            self.genes
        }
        fn cond_dim(&self) -> usize {
            1
        }
        fn predict(&self, x_t: &[f64], _: &[usize], _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![0.0; x_t.len()])
        }
    }

    #[test]
    fn zero_network_without_noise_rescales_prior_draw() {
        let schedule = NoiseSchedule::linear(20, 1e-3, 0.1).unwrap();
        let rng = RngStream::new(5, 0);
        let opts = SamplerOptions {
            noise_scale: 0.0,
            chunk: 3,
        };
        let out = sample(&Zero { genes: 4 }, &[0.0], 5, &schedule, &rng, opts).unwrap();
        let ab_t = schedule.alpha_bar(20).unwrap();
        for j in 0..5 {
            let mut prior = rng.derive(0).derive(j as u64);
            let mut x_t = vec![0f64; 4];
            prior.fill_normal(&mut x_t);
            for g in 0..4 {
                let expect = x_t[g] / ab_t.sqrt();
                assert!((out[j * 4 + g] - expect).abs() < 1e-10 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn chunking_does_not_change_draws() {
        let schedule = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
        let rng = RngStream::new(8, 1);
        let conds = vec![vec![0.0], vec![1.0]];
        let a = sample_spots(&Zero { genes: 3 }, &conds, 4, &schedule, &rng, SamplerOptions { noise_scale: 1.0, chunk: 1 }).unwrap();
        let b = sample_spots(&Zero { genes: 3 }, &conds, 4, &schedule, &rng, SamplerOptions { noise_scale: 1.0, chunk: 64 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_step_schedule_returns_mean() {
        let schedule = NoiseSchedule::linear(1, 0.3, 0.3).unwrap();
        let rng = RngStream::new(1, 1);
        let out = sample(&Zero { genes: 2 }, &[0.0], 1, &schedule, &rng, SamplerOptions::default()).unwrap();
        let mut prior = rng.derive(0).derive(0);
        let mut x1 = vec![0f64; 2];
        prior.fill_normal(&mut x1);
        for g in 0..2 {
            assert!((out[g] - x1[g] / 0.7f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_zero_samples() {
        let schedule = NoiseSchedule::linear(3, 0.1, 0.2).unwrap();
        let rng = RngStream::new(0, 0);
        assert!(sample(&Zero { genes: 1 }, &[0.0], 0, &schedule, &rng, SamplerOptions::default()).is_err());
    }
}
