//! Training objective, optimizer and ancestral sampler.

mod loss;
mod optim;
mod sampler;
mod train;

pub use loss::{corrupt, mse_loss, training_loss, Batch, LossOutput, NoisyBatch};
pub use optim::{clip_grad_norm, debiased_decay, ema_update, AdamW, AdamWConfig};
pub use sampler::{sample, sample_spots, NoisePredictor, SamplerOptions};
pub use train::{train, BatchSource, LogRecord, TrainConfig, TrainOutcome, TrainState};
#[allow(unused_imports)]
pub(crate) use train::{STREAM_BATCH, STREAM_INIT, STREAM_NOISE, STREAM_SAMPLE};
