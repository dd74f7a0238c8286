use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParameters;
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adaptive-moment optimizer with decoupled weight decay:
///
/// ```text
/// m ← β1·m + (1 − β1)·g        v ← β2·v + (1 − β2)·g²
/// p ← p·(1 − lr·wd) − lr · (m / (1 − β1^k)) / (√(v / (1 − β2^k)) + ε)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub first: BTreeMap<String, Vec<T>>,
    pub second: BTreeMap<String, Vec<T>>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ModelParameters<T>) -> Self {
        let zeros = |_: ()| -> BTreeMap<String, Vec<T>> {
            params
                .iter()
                .map(|(k, v)| (k.clone(), vec![T::zero(); v.numel()]))
                .collect()
        };
        AdamW {
            config,
            first: zeros(()),
            second: zeros(()),
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut ModelParameters<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        let c = self.config;
        self.step += 1;
        let k = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(k);
        let bc2 = 1.0 - c.beta2.powi(k);
        let decay = 1.0 - c.lr * c.weight_decay;
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Parameter(format!("no gradient for {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::Dimension(format!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self.first.get_mut(name).expect("moment per parameter");
            let v = self.second.get_mut(name).expect("moment per parameter");
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gf = gv.to_f64().unwrap_or(f64::NAN);
                let mf = c.beta1 * mv.to_f64().unwrap_or(0.0) + (1.0 - c.beta1) * gf;
                let vf = c.beta2 * vv.to_f64().unwrap_or(0.0) + (1.0 - c.beta2) * gf * gf;
                *mv = T::lit(mf);
                *vv = T::lit(vf);
                let update = (mf / bc1) / ((vf / bc2).sqrt() + c.eps);
                let pf = pv.to_f64().unwrap_or(f64::NAN);
                *pv = T::lit(pf * decay - c.lr * update);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| {
            let f = v.to_f64().unwrap_or(0.0);
            f * f
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::lit(max_norm / norm);
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}

/// Decay for the `step`-th update (1-based) of a bias-corrected average.
///
/// Applying `ema_update` with this decay keeps the average equal to
/// `Σ_s (1 − d)·d^(t−s)·θ_s / (1 − d^t)` over the iterates `θ_1..θ_t`: the
/// usual exponential average with the weight on the starting point removed
/// and the remaining weights renormalised. Short runs would otherwise keep
/// a `d^t` share of the initial parameters.
pub fn debiased_decay(decay: f64, step: u64) -> f64 {
    if step == 0 || decay == 0.0 {
        return 0.0;
    }
    let dt = decay.powf(step as f64);
    (decay - dt) / (1.0 - dt)
}

/// `ema ← decay·ema + (1 − decay)·params`, elementwise.
pub fn ema_update<T: Scalar>(ema: &mut ModelParameters<T>, params: &ModelParameters<T>, decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::Parameter(format!("EMA decay {decay} outside [0, 1)")));
    }
    if !ema.same_layout(params) {
        return Err(Error::Parameter("EMA and parameters differ in layout".into()));
    }
    for ((_, e), (_, p)) in ema.iter_mut().zip(params.iter()) {
        for (ev, &pv) in e.data_mut().iter_mut().zip(p.data()) {
            let ef = ev.to_f64().unwrap_or(f64::NAN);
            let pf = pv.to_f64().unwrap_or(f64::NAN);
            *ev = T::lit(decay * ef + (1.0 - decay) * pf);
        }
    }
    Ok(())
}
