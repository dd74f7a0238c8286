//! The conditional noise predictor: gene tokenisation, time and condition
//! embedding, DiT blocks with adaLN-Zero modulation, and the output head.

mod dit;
mod init;
mod panel;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub use dit::{
    bind, denoise, embed_condition, embed_genes, embed_time, predict_noise, sinusoid_embedding,
    BoundParams, LN_EPS,
};
pub use init::{init_parameters, INIT_STD};
pub use panel::{GenePanel, PanelKind};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Gene count, one token per gene.
    pub genes: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub cond_dim: usize,
    #[serde(default = "default_time_dim")]
    pub time_dim: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

fn default_time_dim() -> usize {
    256
}

fn default_mlp_ratio() -> usize {
    4
}

impl ModelConfig {
    /// 12 blocks, 6 heads, hidden dimension 384.
    pub fn paper(genes: usize, cond_dim: usize) -> Self {
        ModelConfig {
            genes,
            hidden_dim: 384,
            depth: 12,
            heads: 6,
            cond_dim,
            time_dim: 256,
            mlp_ratio: 4,
        }
    }

    pub fn desk(genes: usize, cond_dim: usize) -> Self {
        ModelConfig {
            genes,
            hidden_dim: 64,
            depth: 4,
            heads: 4,
            cond_dim,
            time_dim: 256,
            mlp_ratio: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("genes", self.genes),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("cond_dim", self.cond_dim),
            ("time_dim", self.time_dim),
            ("mlp_ratio", self.mlp_ratio),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Parameter(format!("model config: {name} must be positive")));
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::Parameter(format!(
                "model config: hidden_dim {} not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.hidden_dim < 2 {
            return Err(Error::Parameter("model config: hidden_dim must be >= 2".into()));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::Parameter("model config: time_dim must be even".into()));
        }
        Ok(())
    }

    /// Every parameter path with its shape, in canonical order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.hidden_dim;
        let hidden = d * self.mlp_ratio;
        let mut out: Vec<(String, Vec<usize>)> = vec![
            ("gene_count_mlp.w1".into(), vec![1, d]),
            ("gene_count_mlp.b1".into(), vec![d]),
            ("gene_count_mlp.w2".into(), vec![d, d]),
            ("gene_count_mlp.b2".into(), vec![d]),
            ("type_embedding".into(), vec![self.genes, d]),
            ("time_mlp.w1".into(), vec![self.time_dim, d]),
            ("time_mlp.b1".into(), vec![d]),
            ("time_mlp.w2".into(), vec![d, d]),
            ("time_mlp.b2".into(), vec![d]),
            ("cond_mlp.w1".into(), vec![self.cond_dim, d]),
            ("cond_mlp.b1".into(), vec![d]),
            ("cond_mlp.w2".into(), vec![d, d]),
            ("cond_mlp.b2".into(), vec![d]),
        ];
        for i in 0..self.depth {
            let p = |s: &str| format!("block[{i}].{s}");
            out.extend([
                (p("modulation.w"), vec![d, 6 * d]),
                (p("modulation.b"), vec![6 * d]),
                (p("attn.qkv.w"), vec![d, 3 * d]),
                (p("attn.qkv.b"), vec![3 * d]),
                (p("attn.proj.w"), vec![d, d]),
                (p("attn.proj.b"), vec![d]),
                (p("mlp.w1"), vec![d, hidden]),
                (p("mlp.b1"), vec![hidden]),
                (p("mlp.w2"), vec![hidden, d]),
                (p("mlp.b2"), vec![d]),
            ]);
        }
        out.extend([
            ("head.modulation.w".into(), vec![d, 2 * d]),
            ("head.modulation.b".into(), vec![2 * d]),
            ("head.linear.w".into(), vec![d, 1]),
            ("head.linear.b".into(), vec![1]),
        ]);
        out
    }
}

/// Named weights for one [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<T> {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelParameters<T> {
    /// Checks that every expected path is present exactly once with the
    /// expected shape.
    pub fn new(config: ModelConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != tensors.len() {
            return Err(Error::Parameter(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &expected {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Dimension(format!(
                        "parameter {name}: expected shape {shape:?}, got {:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Parameter(format!("missing parameter {name}"))),
            }
        }
        Ok(ModelParameters { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParameters<U> {
        ModelParameters {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Structural equality of names and shapes.
    pub fn same_layout<U: Scalar>(&self, other: &ModelParameters<U>) -> bool {
        self.config == other.config
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape())
    }
}
