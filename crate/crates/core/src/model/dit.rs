//! Forward pass of the noise predictor, recorded on a [`Tape`].
//!
//! Shapes for a batch of `B` examples over `C` genes with hidden size `D`:
//! gene tokens are `[B·C, D]` (example-major), per-example vectors such as
//! the conditioning `c` are `[B, D]` and are expanded to token rows with
//! [`Tape::repeat_rows`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

use super::{ModelConfig, ModelParameters};

pub const LN_EPS: f64 = 1e-6;

/// Parameters registered on a tape.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Registers every parameter as a leaf (`trainable`) or a constant.
pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &ModelParameters<T>, trainable: bool) -> BoundParams {
    let vars = params
        .iter()
        .map(|(name, t)| {
            let v = if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            };
            (name.clone(), v)
        })
        .collect();
    BoundParams { vars }
}

fn linear<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, x: Var, prefix: &str, suffix: &str) -> Result<Var> {
    let w = p.var(&format!("{prefix}.w{suffix}"));
    let b = p.var(&format!("{prefix}.b{suffix}"));
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// Two-layer SiLU MLP `w2 · silu(w1 · x + b1) + b2`.
fn mlp<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, x: Var, prefix: &str) -> Result<Var> {
    let h = linear(tape, p, x, prefix, "1")?;
    let h = tape.silu(h);
    linear(tape, p, h, prefix, "2")
}

/// Sinusoid of a timestep: `s[2k] = sin(t·ω_k)`, `s[2k+1] = cos(t·ω_k)`,
/// `ω_k = 10000^(−2k/dim)`.
pub fn sinusoid_embedding(t: usize, dim: usize) -> Vec<f64> {
    let mut s = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let omega = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        let arg = t as f64 * omega;
        s.push(arg.sin());
        s.push(arg.cos());
    }
    s
}

/// Gene tokens `h_i = MLP(x_i) + type_embedding[i]` for a `[B·C, 1]` column
/// of (noisy) log-counts.
pub fn embed_genes<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    x: Var,
) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 2 || shape[1] != 1 || !shape[0].is_multiple_of(cfg.genes) {
        return Err(Error::Panel(format!(
            "gene input of shape {shape:?} does not match a panel of {} genes",
            cfg.genes
        )));
    }
    let batch = shape[0] / cfg.genes;
    let counts = mlp(tape, p, x, "gene_count_mlp")?;
    let counts = tape.reshape(counts, &[batch, cfg.genes, cfg.hidden_dim])?;
    let tokens = tape.add(counts, p.var("type_embedding"))?;
    tape.reshape(tokens, &[batch * cfg.genes, cfg.hidden_dim])
}

/// `[B, D]` time embeddings for per-example timesteps.
pub fn embed_time<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    ts: &[usize],
) -> Result<Var> {
    let mut data = Vec::with_capacity(ts.len() * cfg.time_dim);
    for &t in ts {
        data.extend(sinusoid_embedding(t, cfg.time_dim).into_iter().map(T::lit));
    }
    let s = tape.constant(Tensor::new(vec![ts.len(), cfg.time_dim], data)?);
    mlp(tape, p, s, "time_mlp")
}

/// `[B, D]` histology conditioning vectors from `[B, cond_dim]` embeddings.
pub fn embed_condition<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    e: Var,
) -> Result<Var> {
    let shape = tape.value(e).shape();
    if shape.len() != 2 || shape[1] != cfg.cond_dim {
        return Err(Error::Condition(format!(
            "condition of shape {shape:?}, expected [_, {}]",
            cfg.cond_dim
        )));
    }
    mlp(tape, p, e, "cond_mlp")
}

/// `layer_norm(x)·(1 + scale) + shift` with per-example `[B, D]` modulation.
fn modulate<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    shift: Var,
    scale: Var,
    tokens: usize,
) -> Result<Var> {
    let h = tape.layer_norm(x, T::lit(LN_EPS))?;
    let scale = tape.add_scalar(scale, T::one());
    let scale = tape.repeat_rows(scale, tokens)?;
    let shift = tape.repeat_rows(shift, tokens)?;
    let h = tape.mul(h, scale)?;
    tape.add(h, shift)
}

fn gated_residual<T: Scalar>(tape: &mut Tape<T>, x: Var, gate: Var, y: Var, tokens: usize) -> Result<Var> {
    let gate = tape.repeat_rows(gate, tokens)?;
    let y = tape.mul(y, gate)?;
    tape.add(x, y)
}

fn dit_block<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    i: usize,
    x: Var,
    silu_c: Var,
) -> Result<Var> {
    let d = cfg.hidden_dim;
    let c = cfg.genes;
    let prefix = format!("block[{i}]");
    let mods = linear(tape, p, silu_c, &format!("{prefix}.modulation"), "")?;
    let mut chunk = |j: usize| tape.slice_cols(mods, j * d, d);
    let (shift_msa, scale_msa, gate_msa) = (chunk(0)?, chunk(1)?, chunk(2)?);
    let (shift_mlp, scale_mlp, gate_mlp) = (chunk(3)?, chunk(4)?, chunk(5)?);

    let h = modulate(tape, x, shift_msa, scale_msa, c)?;
    let qkv = linear(tape, p, h, &format!("{prefix}.attn.qkv"), "")?;
    let a = tape.attention(qkv, c, cfg.heads)?;
    let a = linear(tape, p, a, &format!("{prefix}.attn.proj"), "")?;
    let x = gated_residual(tape, x, gate_msa, a, c)?;

    let h = modulate(tape, x, shift_mlp, scale_mlp, c)?;
    let m = mlp(tape, p, h, &format!("{prefix}.mlp"))?;
    gated_residual(tape, x, gate_mlp, m, c)
}

/// Runs the DiT blocks and the head over gene tokens.
///
/// `tokens` is `[B·C, D]`, `ts` holds one timestep per example and `cond`
/// is `[B, cond_dim]`. Returns the `[B, C]` noise prediction.
pub fn denoise<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    tokens: Var,
    ts: &[usize],
    cond: Var,
) -> Result<Var> {
    let batch = ts.len();
    let shape = tape.value(tokens).shape();
    if shape != [batch * cfg.genes, cfg.hidden_dim] {
        return Err(Error::Dimension(format!(
            "tokens of shape {shape:?}, expected [{}, {}]",
            batch * cfg.genes,
            cfg.hidden_dim
        )));
    }
    if tape.value(cond).shape()[0] != batch {
        return Err(Error::Dimension(format!(
            "{} timesteps but {} condition rows",
            batch,
            tape.value(cond).shape()[0]
        )));
    }
    let t_emb = embed_time(tape, p, cfg, ts)?;
    let c_emb = embed_condition(tape, p, cfg, cond)?;
    let c = tape.add(t_emb, c_emb)?;
    let silu_c = tape.silu(c);

    let mut x = tokens;
    for i in 0..cfg.depth {
        x = dit_block(tape, p, cfg, i, x, silu_c)?;
    }

    let mods = linear(tape, p, silu_c, "head.modulation", "")?;
    let shift = tape.slice_cols(mods, 0, cfg.hidden_dim)?;
    let scale = tape.slice_cols(mods, cfg.hidden_dim, cfg.hidden_dim)?;
    let h = modulate(tape, x, shift, scale, cfg.genes)?;
    let out = linear(tape, p, h, "head.linear", "")?;
    tape.reshape(out, &[batch, cfg.genes])
}

/// Full prediction `ε̂(x_t, e, t)` for `[B, C]` noisy profiles.
pub fn predict_noise<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    x_t: Var,
    ts: &[usize],
    cond: Var,
) -> Result<Var> {
    let shape = tape.value(x_t).shape().to_vec();
    if shape.len() != 2 || shape[1] != cfg.genes {
        return Err(Error::Panel(format!(
            "profile batch of shape {shape:?}, expected [_, {}]",
            cfg.genes
        )));
    }
    let column = tape.reshape(x_t, &[shape[0] * cfg.genes, 1])?;
    let tokens = embed_genes(tape, p, cfg, column)?;
    denoise(tape, p, cfg, tokens, ts, cond)
}

impl<T: Scalar> ModelParameters<T> {
    /// Forward-only prediction for a row-major `[B, C]` batch.
    pub fn predict(&self, x_t: &[T], ts: &[usize], cond: &[T]) -> Result<Vec<T>> {
        let cfg = self.config();
        let batch = ts.len();
        let mut tape = Tape::new();
        let p = bind(&mut tape, self, false);
        let x = tape.constant(Tensor::new(vec![batch, cfg.genes], x_t.to_vec())?);
        let e = Tensor::new(vec![batch, cfg.cond_dim], cond.to_vec())
            .map_err(|e| Error::Condition(e.to_string()))?;
        let e = tape.constant(e);
        let out = predict_noise(&mut tape, &p, cfg, x, ts, e)?;
        Ok(tape.value(out).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_parameters;
    use crate::numerics::RngStream;

    #[test]
    fn sinusoid_values() {
        let s = sinusoid_embedding(0, 256);
        for (i, v) in s.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
        let s = sinusoid_embedding(1, 256);
        assert!((s[0] - 0.84147).abs() < 1e-5);
        assert!((s[1] - 0.54030).abs() < 1e-5);
        for t in [1, 17, 999, 123456] {
            assert!(sinusoid_embedding(t, 256).iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn fresh_model_predicts_zero() {
        let cfg = ModelConfig::desk(6, 3);
        let params = init_parameters::<f32>(&cfg, &RngStream::new(3, 0)).unwrap();
        let mut rng = RngStream::new(4, 0);
        let mut x = vec![0f32; 2 * 6];
        let mut e = vec![0f32; 2 * 3];
        rng.fill_normal(&mut x);
        rng.fill_normal(&mut e);
        let out = params.predict(&x, &[1, 50], &e).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_count_mlp_gives_type_rows() {
        let cfg = ModelConfig {
            genes: 3,
            hidden_dim: 4,
            depth: 1,
            heads: 2,
            cond_dim: 2,
            time_dim: 8,
            mlp_ratio: 2,
        };
        let mut params = init_parameters::<f64>(&cfg, &RngStream::new(1, 1)).unwrap();
        for name in ["gene_count_mlp.w1", "gene_count_mlp.w2"] {
            params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let p = bind(&mut tape, &params, false);
        let x = tape.constant(Tensor::new(vec![3, 1], vec![0.3, -1.0, 2.0]).unwrap());
        let tokens = embed_genes(&mut tape, &p, &cfg, x).unwrap();
        assert_eq!(
            tape.value(tokens).data(),
            params.get("type_embedding").unwrap().data()
        );
    }

    #[test]
    fn equal_counts_differ_by_type_rows() {
        let cfg = ModelConfig::desk(4, 2);
        let params = init_parameters::<f64>(&cfg, &RngStream::new(8, 1)).unwrap();
        let mut tape = Tape::new();
        let p = bind(&mut tape, &params, false);
        let x = tape.constant(Tensor::new(vec![4, 1], vec![0.7, 0.7, -2.0, 0.7]).unwrap());
        let tokens = embed_genes(&mut tape, &p, &cfg, x).unwrap();
        let tok = tape.value(tokens).data();
        let ty = params.get("type_embedding").unwrap().data();
        let d = cfg.hidden_dim;
        for k in 0..d {
            let lhs = tok[k] - tok[3 * d + k];
            let rhs = ty[k] - ty[3 * d + k];
            assert!((lhs - rhs).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_traced_single_gene_embedding() {
        // w1 = [1, 0, 0, 0] and w2 = e1·e1ᵀ route x through one silu unit
        // into coordinate 0: token = [silu(x), 0, 0, 0].
        let cfg = ModelConfig {
            genes: 1,
            hidden_dim: 4,
            depth: 0,
            heads: 1,
            cond_dim: 2,
            time_dim: 4,
            mlp_ratio: 1,
        };
        let mut params = init_parameters::<f64>(&cfg, &RngStream::new(0, 0)).unwrap();
        params.get_mut("type_embedding").unwrap().data_mut().fill(0.0);
        let w1 = params.get_mut("gene_count_mlp.w1").unwrap().data_mut();
        w1.fill(0.0);
        w1[0] = 1.0;
        let w2 = params.get_mut("gene_count_mlp.w2").unwrap().data_mut();
        w2.fill(0.0);
        w2[0] = 1.0;
        let x = 1.25f64;
        let mut tape = Tape::new();
        let p = bind(&mut tape, &params, false);
        let xv = tape.constant(Tensor::new(vec![1, 1], vec![x]).unwrap());
        let tokens = embed_genes(&mut tape, &p, &cfg, xv).unwrap();
        let silu = x / (1.0 + (-x).exp());
        let got = tape.value(tokens).data();
        assert!((got[0] - silu).abs() < 1e-15);
        assert_eq!(&got[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn condition_embedding_hand_trace() {
        let cfg = ModelConfig {
            genes: 1,
            hidden_dim: 2,
            depth: 0,
            heads: 1,
            cond_dim: 2,
            time_dim: 4,
            mlp_ratio: 1,
        };
        let mut params = init_parameters::<f64>(&cfg, &RngStream::new(0, 0)).unwrap();
        // w1 = [[1, 2], [0, -1]], b1 = [0.5, 0], w2 = [[1, 0], [1, 1]], b2 = [0, 0.25]
        params.get_mut("cond_mlp.w1").unwrap().data_mut().copy_from_slice(&[1., 2., 0., -1.]);
        params.get_mut("cond_mlp.b1").unwrap().data_mut().copy_from_slice(&[0.5, 0.]);
        params.get_mut("cond_mlp.w2").unwrap().data_mut().copy_from_slice(&[1., 0., 1., 1.]);
        params.get_mut("cond_mlp.b2").unwrap().data_mut().copy_from_slice(&[0., 0.25]);
        let e = [1.0f64, 3.0];
        let h = [e[0] + 0.5, 2.0 * e[0] - e[1]];
        let silu = |v: f64| v / (1.0 + (-v).exp());
        let s = [silu(h[0]), silu(h[1])];
        let expect = [s[0] + s[1], s[1] + 0.25];
        let mut tape = Tape::new();
        let p = bind(&mut tape, &params, false);
        let ev = tape.constant(Tensor::new(vec![1, 2], e.to_vec()).unwrap());
        let out = embed_condition(&mut tape, &p, &cfg, ev).unwrap();
        let got = tape.value(out).data();
        assert!((got[0] - expect[0]).abs() < 1e-15 && (got[1] - expect[1]).abs() < 1e-15);

        let mut zeroed = params.clone();
        for name in ["cond_mlp.w1", "cond_mlp.b1", "cond_mlp.w2", "cond_mlp.b2"] {
            zeroed.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let p = bind(&mut tape, &zeroed, false);
        let ev = tape.constant(Tensor::new(vec![1, 2], e.to_vec()).unwrap());
        let out = embed_condition(&mut tape, &p, &cfg, ev).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let cfg = ModelConfig::desk(4, 3);
        let params = init_parameters::<f32>(&cfg, &RngStream::new(0, 0)).unwrap();
        assert!(matches!(
            params.predict(&[0.0; 5], &[1], &[0.0; 3]),
            Err(Error::Dimension(_)) | Err(Error::Panel(_))
        ));
        assert!(matches!(
            params.predict(&[0.0; 4], &[1], &[0.0; 2]),
            Err(Error::Condition(_))
        ));
    }
}
