//! Embedding-level augmentation and the training batch sampler.

use crate::diffusion::{Batch, BatchSource};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

use super::record::{Dataset, Split, TransformTag};

/// Which embedding of each record a draw uses.
///
/// A draw picks the identity view with probability
/// `ratio_original / (ratio_original + ratio_augmented)`, otherwise a
/// non-identity view uniformly among those the record has. Records without
/// augmented views always yield their identity view.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPlan {
    ratio_original: u32,
    ratio_augmented: u32,
    /// Per record: position of the identity embedding, then the augmented ones.
    identity: Vec<usize>,
    augmented: Vec<Vec<usize>>,
}

impl SamplingPlan {
    pub fn identity_probability(&self) -> f64 {
        self.ratio_original as f64 / (self.ratio_original + self.ratio_augmented) as f64
    }

    /// Index into `records()[record].embeddings`.
    pub fn choose(&self, record: usize, rng: &mut RngStream) -> usize {
        if self.ratio_augmented == 0 {
            return self.identity[record];
        }
        let u = rng.uniform();
        let aug = &self.augmented[record];
        if u < self.identity_probability() || aug.is_empty() {
            self.identity[record]
        } else {
            aug[rng.below(aug.len())]
        }
    }
}

pub fn expand_augmented(dataset: &Dataset, ratio_original: u32, ratio_augmented: u32) -> Result<SamplingPlan> {
    if ratio_original == 0 && ratio_augmented == 0 {
        return Err(Error::Parameter("augmentation ratio 0:0".into()));
    }
    let mut identity = Vec::with_capacity(dataset.len());
    let mut augmented = Vec::with_capacity(dataset.len());
    let mut bare = 0usize;
    for r in dataset.records() {
        let mut id = None;
        let mut aug = Vec::new();
        for (i, e) in r.embeddings.iter().enumerate() {
            if e.tag == TransformTag::Identity {
                id = Some(i);
            } else {
                aug.push(i);
            }
        }
        if aug.is_empty() {
            bare += 1;
        }
        identity.push(id.expect("datasets validate an identity embedding"));
        augmented.push(aug);
    }
    if ratio_augmented > 0 && bare > 0 {
        log::warn!("{bare} records have no augmented embeddings and contribute identity views only");
    }
    Ok(SamplingPlan {
        ratio_original,
        ratio_augmented,
        identity,
        augmented,
    })
}

/// Uniform-with-replacement batches over the training slides only.
pub struct TrainingSampler<'a> {
    dataset: &'a Dataset,
    train: Vec<usize>,
    plan: SamplingPlan,
}

impl<'a> TrainingSampler<'a> {
    pub fn new(dataset: &'a Dataset, ratio_original: u32, ratio_augmented: u32) -> Result<Self> {
        if !dataset.log_transformed() {
            return Err(Error::Contract("training data must be log-transformed".into()));
        }
        let train = dataset.indices(Split::Train);
        if train.is_empty() {
            return Err(Error::Parameter("dataset has no training spots".into()));
        }
        let plan = expand_augmented(dataset, ratio_original, ratio_augmented)?;
        Ok(TrainingSampler { dataset, train, plan })
    }

    pub fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    /// `(record index, embedding index)` pairs of one batch, in draw order.
    pub fn draw_indices(&self, size: usize, rng: &mut RngStream) -> Vec<(usize, usize)> {
        (0..size)
            .map(|_| {
                let r = self.train[rng.below(self.train.len())];
                (r, self.plan.choose(r, rng))
            })
            .collect()
    }
}

impl BatchSource<f32> for TrainingSampler<'_> {
    fn genes(&self) -> usize {
        self.dataset.panel().len()
    }

    fn cond_dim(&self) -> usize {
        self.dataset.cond_dim()
    }

    fn draw(&self, size: usize, rng: &mut RngStream) -> Result<Batch<f32>> {
        let picks = self.draw_indices(size, rng);
        let mut x0 = Vec::with_capacity(size * self.genes());
        let mut cond = Vec::with_capacity(size * self.cond_dim());
        for (r, e) in picks {
            let rec = &self.dataset.records()[r];
            x0.extend(rec.counts.iter().map(|&v| v as f32));
            cond.extend_from_slice(&rec.embeddings[e].values);
        }
        Ok(Batch { x0, cond, size })
    }
}
