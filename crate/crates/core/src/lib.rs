//! Conditional denoising diffusion for spatial gene-expression inference.
//!
//! A DiT-style noise predictor is conditioned on precomputed histology
//! patch embeddings and trained with the ε-prediction objective. The crate
//! also carries the evaluation metrics, gene-panel selection, a retrieval
//! baseline and a synthetic benchmark with closed-form conditional
//! statistics.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod schedule;

pub use error::{Error, Result};
