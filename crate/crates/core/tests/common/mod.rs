//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use stem::diffusion::{training_loss, Batch};
use stem::model::{init_parameters, ModelConfig, ModelParameters};
use stem::numerics::{BackwardMode, RngStream, Tape, Tensor, Var};
use stem::schedule::NoiseSchedule;

/// Central-difference derivative of `f` at `x` in every coordinate.
pub fn finite_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a − b| / max(1, max |b|)`: relative to the gradient's scale, with an
/// absolute floor so near-zero gradients do not divide by zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn random_tensor(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    let mut data = vec![0.0; shape.iter().product()];
    rng.fill_normal(&mut data);
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Checks `build` (which maps leaves to a scalar loss) against finite
/// differences for every leaf; returns the worst relative error.
pub fn gradcheck(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss, BackwardMode::Reset).unwrap();
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).unwrap().data().to_vec();
        let mut f = |x: &[f64]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, inp)| {
                    if j == k {
                        t.leaf(Tensor::new(inp.shape().to_vec(), x.to_vec()).unwrap())
                    } else {
                        t.leaf(inp.clone())
                    }
                })
                .collect();
            let l = build(&mut t, &vs);
            t.value(l).data()[0]
        };
        let numeric = finite_difference(&mut f, input.data(), 1e-5);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Sample Pearson correlation, straight from the textbook definition.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

/// The tiny model used for whole-network gradient checks.
pub fn tiny_model(depth: usize) -> ModelConfig {
    ModelConfig {
        genes: 3,
        hidden_dim: 8,
        depth,
        heads: 2,
        cond_dim: 4,
        time_dim: 8,
        mlp_ratio: 2,
    }
}

/// Fresh parameters with every tensor perturbed by `N(0, 0.1²)`, so the
/// zero-initialised modulation and head carry gradient too.
pub fn perturbed_parameters(cfg: &ModelConfig, seed: u64) -> ModelParameters<f64> {
    let rng = RngStream::new(seed, 7);
    let mut params = init_parameters::<f64>(cfg, &rng.derive(1)).unwrap();
    let mut noise = rng.derive(2);
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += 0.1 * noise.normal();
        }
    }
    params
}

/// Whole-model check in f64: the ε-prediction loss gradient for every
/// parameter against central differences of the forward pass on the same
/// noisy batch. Returns the worst relative error over all parameters.
pub fn model_gradcheck(cfg: &ModelConfig, seed: u64) -> f64 {
    let params = perturbed_parameters(cfg, seed);
    let schedule = NoiseSchedule::linear(20, 1e-3, 0.2).unwrap();
    let mut rng = RngStream::new(seed, 8);
    let size = 3;
    let mut x0 = vec![0.0; size * cfg.genes];
    let mut cond = vec![0.0; size * cfg.cond_dim];
    rng.fill_normal(&mut x0);
    rng.fill_normal(&mut cond);
    let batch = Batch { x0, cond, size };
    let out = training_loss(&params, &batch, &schedule, &mut rng.clone()).unwrap();
    let noisy = out.noisy;

    let loss_of = |p: &ModelParameters<f64>| {
        let pred = p.predict(&noisy.x_t, &noisy.ts, &batch.cond).unwrap();
        pred.iter().zip(&noisy.eps).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64
    };
    assert!((loss_of(&params) - out.loss).abs() < 1e-12);

    let mut worst = 0.0f64;
    for (name, tensor) in params.iter() {
        let mut probe = params.clone();
        let mut f = |x: &[f64]| {
            probe.get_mut(name).unwrap().data_mut().copy_from_slice(x);
            loss_of(&probe)
        };
        let numeric = finite_difference(&mut f, tensor.data(), 1e-5);
        worst = worst.max(relative_error(out.grads[name].data(), &numeric));
    }
    worst
}

/// Worst relative gradient error of each tape operation over five shapes,
/// with the output contracted against fixed random weights.
pub fn op_suite() -> Vec<(&'static str, f64)> {
    type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;
    type Cases = Vec<(Vec<Vec<usize>>, Build)>;
    let shapes: [&[usize]; 5] = [&[1, 2], &[1, 5], &[4, 2], &[3, 4], &[6, 7]];
    let unary = |f: fn(&mut Tape<f64>, Var) -> Var| -> Cases {
        shapes
            .iter()
            .map(|s| (vec![s.to_vec()], Box::new(move |t: &mut Tape<f64>, v: &[Var]| f(t, v[0])) as Build))
            .collect()
    };
    let binary = |pairs: [(&[usize], &[usize]); 5], f: fn(&mut Tape<f64>, Var, Var) -> Var| -> Cases {
        pairs
            .iter()
            .map(|(a, b)| {
                (vec![a.to_vec(), b.to_vec()], Box::new(move |t: &mut Tape<f64>, v: &[Var]| f(t, v[0], v[1])) as Build)
            })
            .collect()
    };
    let broadcast: [(&[usize], &[usize]); 5] = [(&[1], &[1]), (&[3, 4], &[3, 4]), (&[3, 4], &[4]), (&[5, 2], &[2]), (&[2, 3, 4], &[3, 4])];
    let products: [(&[usize], &[usize]); 5] = [(&[1, 1], &[1, 1]), (&[1, 4], &[4, 1]), (&[3, 1], &[1, 5]), (&[3, 4], &[4, 2]), (&[7, 5], &[5, 6])];
    let attention: Cases = [(1, 1, 1, 1), (1, 3, 1, 2), (2, 3, 2, 2), (2, 4, 3, 1), (3, 2, 2, 3)]
        .into_iter()
        .map(|(b, seq, heads, hd): (usize, usize, usize, usize)| {
            let shape = vec![b * seq, 3 * heads * hd];
            (vec![shape], Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.attention(v[0], seq, heads).unwrap()) as Build)
        })
        .collect();

    let suite: Vec<(&'static str, Cases)> = vec![
        ("matmul", binary(products, |t, a, b| t.matmul(a, b).unwrap())),
        ("add", binary(broadcast, |t, a, b| t.add(a, b).unwrap())),
        ("sub", binary(broadcast, |t, a, b| t.sub(a, b).unwrap())),
        ("mul", binary(broadcast, |t, a, b| t.mul(a, b).unwrap())),
        ("scale", unary(|t, x| t.scale(x, -1.3))),
        ("add_scalar", unary(|t, x| t.add_scalar(x, 0.7))),
        ("silu", unary(|t, x| t.silu(x))),
        ("layer_norm", unary(|t, x| t.layer_norm(x, 1e-6).unwrap())),
        ("softmax", unary(|t, x| t.softmax(x).unwrap())),
        ("sum", unary(|t, x| {
            let sq = t.mul(x, x).unwrap();
            t.sum(sq)
        })),
        ("mean", unary(|t, x| {
            let sq = t.mul(x, x).unwrap();
            t.mean(sq)
        })),
        ("reshape", unary(|t, x| {
            let n = t.value(x).numel();
            t.reshape(x, &[1, n]).unwrap()
        })),
        ("repeat_rows", unary(|t, x| t.repeat_rows(x, 3).unwrap())),
        ("slice_cols", unary(|t, x| {
            let c = t.value(x).cols();
            t.slice_cols(x, c / 2, c - c / 2).unwrap()
        })),
        ("attention", attention),
    ];

    suite
        .into_iter()
        .map(|(name, cases)| {
            let worst = cases
                .iter()
                .enumerate()
                .map(|(i, (shapes, build))| {
                    let mut rng = RngStream::new(i as u64, 17);
                    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(s, &mut rng)).collect();
                    gradcheck(&inputs, &|t, v| {
                        let out = build(t, v);
                        let shape = t.value(out).shape().to_vec();
                        let w = t.constant(random_tensor(&shape, &mut RngStream::new(i as u64, 18)));
                        let p = t.mul(out, w).unwrap();
                        t.sum(p)
                    })
                })
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}
