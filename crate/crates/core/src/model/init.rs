use std::collections::BTreeMap;

use crate::error::Result;
use crate::numerics::{RngStream, Scalar, Tensor};

use super::{ModelConfig, ModelParameters};

/// Standard deviation of every randomly initialised weight.
pub const INIT_STD: f64 = 0.02;

fn zero_initialised(name: &str) -> bool {
    name.ends_with(".b")
        || name.ends_with(".b1")
        || name.ends_with(".b2")
        || name.contains(".modulation.")
        || name.starts_with("head.linear.")
}

/// Fresh parameters.
///
/// - biases, every modulation layer and the head's final linear map: zeros
/// - `type_embedding`: N(0, 0.02²)
/// - all other weights: N(0, 0.02²) truncated to ±2 standard deviations
///
/// Parameter `i` in canonical order draws from `rng.derive(i)`.
pub fn init_parameters<T: Scalar>(config: &ModelConfig, rng: &RngStream) -> Result<ModelParameters<T>> {
    config.validate()?;
    let mut tensors = BTreeMap::new();
    for (i, (name, shape)) in config.parameter_shapes().into_iter().enumerate() {
        let mut t = Tensor::zeros(&shape);
        if !zero_initialised(&name) {
            let mut stream = rng.derive(i as u64);
            if name == "type_embedding" {
                stream.fill_normal(t.data_mut());
                for v in t.data_mut() {
                    *v = *v * T::lit(INIT_STD);
                }
            } else {
                stream.fill_truncated_normal(t.data_mut(), INIT_STD);
            }
        }
        tensors.insert(name, t);
    }
    ModelParameters::new(config.clone(), tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_layers_are_exactly_zero() {
        let cfg = ModelConfig::desk(5, 3);
        let p = init_parameters::<f32>(&cfg, &RngStream::new(1, 0)).unwrap();
        for (name, t) in p.iter() {
            let all_zero = t.data().iter().all(|&v| v == 0.0);
            assert_eq!(all_zero, zero_initialised(name), "{name}");
        }
        assert!(p.get("head.linear.w").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p
            .get("block[3].modulation.w")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic() {
        let cfg = ModelConfig::desk(5, 3);
        let a = init_parameters::<f32>(&cfg, &RngStream::new(9, 2)).unwrap();
        let b = init_parameters::<f32>(&cfg, &RngStream::new(9, 2)).unwrap();
        let c = init_parameters::<f32>(&cfg, &RngStream::new(10, 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
