use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{bind, predict_noise, ModelParameters};
use crate::numerics::{BackwardMode, RngStream, Scalar, Tape, Tensor, Var};
use crate::schedule::NoiseSchedule;

/// Clean training examples, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `[size, genes]` log-space profiles.
    pub x0: Vec<T>,
    /// `[size, cond_dim]` condition embeddings.
    pub cond: Vec<T>,
    pub size: usize,
}

/// The corrupted batch a loss evaluation actually saw.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyBatch<T> {
    pub ts: Vec<usize>,
    pub eps: Vec<T>,
    pub x_t: Vec<T>,
}

/// Draws one timestep `t ~ U{1..T}` and `ε ~ N(0, I)` per example (in that
/// order from `rng`) and forms `x_t` with [`NoiseSchedule::forward_marginal`].
pub fn corrupt<T: Scalar>(
    batch: &Batch<T>,
    genes: usize,
    schedule: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<NoisyBatch<T>> {
    if batch.size == 0 {
        return Err(Error::Parameter("empty training batch".into()));
    }
    if batch.x0.len() != batch.size * genes {
        return Err(Error::Dimension(format!(
            "batch holds {} values for {} examples of {genes} genes",
            batch.x0.len(),
            batch.size
        )));
    }
    let mut ts = Vec::with_capacity(batch.size);
    let mut eps = vec![T::zero(); batch.x0.len()];
    let mut x_t = Vec::with_capacity(batch.x0.len());
    for (i, x0) in batch.x0.chunks_exact(genes).enumerate() {
        let t = 1 + rng.below(schedule.steps());
        let noise = &mut eps[i * genes..(i + 1) * genes];
        rng.fill_normal(noise);
        x_t.extend(schedule.forward_marginal(x0, t, noise)?);
        ts.push(t);
    }
    Ok(NoisyBatch { ts, eps, x_t })
}

/// `mean((pred − target)²)` over every entry.
pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

pub struct LossOutput<T> {
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor<T>>,
    pub noisy: NoisyBatch<T>,
}

/// ε-prediction loss with gradients for every parameter.
pub fn training_loss<T: Scalar>(
    params: &ModelParameters<T>,
    batch: &Batch<T>,
    schedule: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<LossOutput<T>> {
    let cfg = params.config();
    let noisy = corrupt(batch, cfg.genes, schedule, rng)?;
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params, true);
    let x_t = tape.constant(Tensor::new(vec![batch.size, cfg.genes], noisy.x_t.clone())?);
    let cond = tape.constant(
        Tensor::new(vec![batch.size, cfg.cond_dim], batch.cond.clone())
            .map_err(|e| Error::Condition(e.to_string()))?,
    );
    let eps = tape.constant(Tensor::new(vec![batch.size, cfg.genes], noisy.eps.clone())?);
    let pred = predict_noise(&mut tape, &bound, cfg, x_t, &noisy.ts, cond)?;
    let loss_var = mse_loss(&mut tape, pred, eps)?;
    let loss = tape.value(loss_var).data()[0].to_f64().unwrap_or(f64::NAN);
    if !loss.is_finite() {
        let max_pred = tape.value(pred).max_abs();
        return Err(Error::Numeric(format!(
            "training loss is {loss} (max |eps_hat| = {max_pred}, timesteps {:?})",
            &noisy.ts[..noisy.ts.len().min(8)]
        )));
    }
    tape.backward(loss_var, BackwardMode::Reset)?;
    let grads = bound
        .iter()
        .map(|(name, &v)| {
            let g = tape.take_grad(v).expect("trainable leaf has a gradient");
            (name.clone(), g)
        })
        .collect();
    Ok(LossOutput { loss, grads, noisy })
}
