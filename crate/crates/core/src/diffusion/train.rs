use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{init_parameters, ModelConfig, ModelParameters};
use crate::numerics::{RngStream, Scalar};
use crate::schedule::NoiseSchedule;

use super::loss::{training_loss, Batch};
use super::optim::{clip_grad_norm, debiased_decay, ema_update, AdamW, AdamWConfig};

/// Stream tags under the master seed.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_BATCH: u64 = 2;
pub(crate) const STREAM_NOISE: u64 = 3;
pub(crate) const STREAM_SAMPLE: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Nominal decay of the bias-corrected parameter average.
    pub ema_decay: f64,
    /// Identity : augmented draw ratio for condition embeddings.
    pub ratio_original: u32,
    pub ratio_augmented: u32,
    pub seed: u64,
    pub log_every: usize,
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 250_000,
            batch_size: 256,
            lr: 1e-4,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            ema_decay: 0.9999,
            ratio_original: 1,
            ratio_augmented: 0,
            seed: 0,
            log_every: 100,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Parameter("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Parameter("ema_decay must lie in [0, 1)".into()));
        }
        if self.ratio_original == 0 && self.ratio_augmented == 0 {
            return Err(Error::Parameter("augmentation ratio 0:0".into()));
        }
        Ok(())
    }
}

/// Source of training batches (the split-aware sampler in `data`).
pub trait BatchSource<T> {
    fn genes(&self) -> usize;
    fn cond_dim(&self) -> usize;
    fn draw(&self, size: usize, rng: &mut RngStream) -> Result<Batch<T>>;
}

pub struct TrainState<T> {
    pub params: ModelParameters<T>,
    pub ema_params: ModelParameters<T>,
    pub optimizer: AdamW<T>,
    pub step: u64,
    pub rng: RngStream,
    pub schedule: NoiseSchedule,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh parameters from `seed`; EMA starts as a copy.
    pub fn new(model: &ModelConfig, config: &TrainConfig, schedule: NoiseSchedule) -> Result<Self> {
        let rng = RngStream::new(config.seed, 0);
        let params = init_parameters(model, &rng.derive(STREAM_INIT))?;
        let optimizer = AdamW::new(config.adamw(), &params);
        Ok(TrainState {
            ema_params: params.clone(),
            params,
            optimizer,
            step: 0,
            rng,
            schedule,
        })
    }

    /// One loss evaluation, optimizer update and EMA update. Returns the loss.
    pub fn step(&mut self, source: &dyn BatchSource<T>, config: &TrainConfig) -> Result<f64> {
        let mut batch_rng = self.rng.derive(STREAM_BATCH).derive(self.step);
        let mut noise_rng = self.rng.derive(STREAM_NOISE).derive(self.step);
        let batch = source.draw(config.batch_size, &mut batch_rng)?;
        let mut out = training_loss(&self.params, &batch, &self.schedule, &mut noise_rng)
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("step {}: {msg}", self.step + 1)),
                other => other,
            })?;
        if let Some(max_norm) = config.max_grad_norm {
            clip_grad_norm(&mut out.grads, max_norm);
        }
        self.optimizer.update(&mut self.params, &out.grads)?;
        self.step += 1;
        ema_update(&mut self.ema_params, &self.params, debiased_decay(config.ema_decay, self.step))?;
        Ok(out.loss)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub loss: f64,
    pub wallclock_ms: u128,
}

impl LogRecord {
    /// `step,loss,wallclock_ms`
    pub fn line(&self) -> String {
        format!("{},{},{}", self.step, self.loss, self.wallclock_ms)
    }
}

pub struct TrainOutcome<T> {
    pub state: TrainState<T>,
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
}

/// Runs `config.iterations` steps, calling `log` every `log_every` steps and
/// after the last one.
pub fn train<T: Scalar>(
    source: &dyn BatchSource<T>,
    model: &ModelConfig,
    config: &TrainConfig,
    schedule: NoiseSchedule,
    mut log: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    model.validate()?;
    if source.genes() != model.genes || source.cond_dim() != model.cond_dim {
        return Err(Error::Panel(format!(
            "data has {} genes / cond_dim {}, model expects {} / {}",
            source.genes(),
            source.cond_dim(),
            model.genes,
            model.cond_dim
        )));
    }
    let mut state = TrainState::new(model, config, schedule)?;
    let mut losses = Vec::with_capacity(config.iterations);
    let start = Instant::now();
    for i in 0..config.iterations {
        let loss = state.step(source, config)?;
        losses.push(loss);
        let last = i + 1 == config.iterations;
        if last || (config.log_every > 0 && (i + 1) % config.log_every == 0) {
            log(&LogRecord {
                step: state.step,
                loss,
                wallclock_ms: start.elapsed().as_millis(),
            })?;
        }
    }
    Ok(TrainOutcome { state, losses })
}
