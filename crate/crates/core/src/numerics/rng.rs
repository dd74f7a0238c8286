//! Counter-based random streams built on Philox4x32-10.
//!
//! A stream is the triple `(seed, stream_id, counter)`. Each call to the
//! block function encrypts the 128-bit counter `(counter, stream_id)` under
//! the 64-bit key `seed`, so any position of any stream can be computed
//! directly and the output is identical on every platform.
//!
//! Derived values:
//! - `next_u64`: one block, words 0 and 1 as `w0 | w1 << 32`.
//! - uniforms: `(u64 >> 11) * 2^-53`.
//! - Gaussians: Box–Muller on the two 64-bit halves of one block, producing
//!   two normals per block; an odd request discards the last one.

use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tensor::Tensor;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// The Philox4x32 bijection with 10 rounds.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
    pub counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream {
            seed,
            stream_id,
            counter: 0,
        }
    }

    /// Child stream keyed by `tag`, starting at counter 0. Distinct tags give
    /// distinct stream ids; the parent is not advanced.
    pub fn derive(&self, tag: u64) -> RngStream {
        let id = splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D)));
        RngStream::new(self.seed, id)
    }

    pub fn next_block(&mut self) -> [u32; 4] {
        let ctr = [
            self.counter as u32,
            (self.counter >> 32) as u32,
            self.stream_id as u32,
            (self.stream_id >> 32) as u32,
        ];
        let key = [self.seed as u32, (self.seed >> 32) as u32];
        self.counter = self.counter.wrapping_add(1);
        philox4x32_10(ctr, key)
    }

    fn next_pair(&mut self) -> (u64, u64) {
        let w = self.next_block();
        (
            u64::from(w[0]) | (u64::from(w[1]) << 32),
            u64::from(w[2]) | (u64::from(w[3]) << 32),
        )
    }

    pub fn next_u64(&mut self) -> u64 {
        self.next_pair().0
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Uniform integer on `0..n` (multiply-shift; bias below 2^-64 · n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn normal_pair(&mut self) -> (f64, f64) {
        let (a, b) = self.next_pair();
        let u1 = 1.0 - to_unit(a);
        let u2 = to_unit(b);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    pub fn normal(&mut self) -> f64 {
        self.normal_pair().0
    }

    pub fn fill_normal<T: Scalar>(&mut self, out: &mut [T]) {
        for chunk in out.chunks_mut(2) {
            let (a, b) = self.normal_pair();
            chunk[0] = T::lit(a);
            if let Some(slot) = chunk.get_mut(1) {
                *slot = T::lit(b);
            }
        }
    }

    /// Standard normal draws truncated to `[-2, 2]` by rejection, scaled by `std`.
    pub fn fill_truncated_normal<T: Scalar>(&mut self, out: &mut [T], std: f64) {
        let mut i = 0;
        while i < out.len() {
            let (a, b) = self.normal_pair();
            for z in [a, b] {
                if i < out.len() && z.abs() <= 2.0 {
                    out[i] = T::lit(z * std);
                    i += 1;
                }
            }
        }
    }
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Tensor of i.i.d. standard normal draws.
pub fn gaussian<T: Scalar>(shape: &[usize], rng: &mut RngStream) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    rng.fill_normal(t.data_mut());
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    // Known-answer vectors published with the Random123 reference implementation.
    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32_10([0; 4], [0; 2]),
            [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]
        );
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32_10(
                [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344],
                [0xa409_3822, 0x299f_31d0]
            ),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn same_state_same_tensor() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let x: Tensor<f32> = gaussian(&[5, 7], &mut a);
        let y: Tensor<f32> = gaussian(&[5, 7], &mut b);
        assert_eq!(x, y);
        assert_eq!(a.counter, 18);
    }

    #[test]
    fn counter_positions_are_addressable() {
        let mut a = RngStream::new(11, 0);
        a.next_block();
        let second = a.next_block();
        let mut b = RngStream {
            seed: 11,
            stream_id: 0,
            counter: 1,
        };
        assert_eq!(b.next_block(), second);
    }

    #[test]
    fn law_of_large_numbers() {
        let mut rng = RngStream::new(2024, 1);
        let x: Tensor<f64> = gaussian(&[1_000_000], &mut rng);
        let n = x.numel() as f64;
        let mean = x.data().iter().sum::<f64>() / n;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn derived_streams_are_uncorrelated() {
        let root = RngStream::new(99, 0);
        let mut a = root.derive(1);
        let mut b = root.derive(2);
        assert_ne!(a.stream_id, b.stream_id);
        let x: Tensor<f64> = gaussian(&[100_000], &mut a);
        let y: Tensor<f64> = gaussian(&[100_000], &mut b);
        let n = 100_000.0;
        let (mx, my) = (
            x.data().iter().sum::<f64>() / n,
            y.data().iter().sum::<f64>() / n,
        );
        let cov: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - mx) * (b - my))
            .sum();
        let vx: f64 = x.data().iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.data().iter().map(|b| (b - my).powi(2)).sum();
        let r = cov / (vx * vy).sqrt();
        assert!(r.abs() < 0.02, "correlation {r}");
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = RngStream::new(1, 1);
        let mut seen = [0usize; 5];
        for _ in 0..10_000 {
            seen[rng.below(5)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 1800));
    }

    #[test]
    fn truncated_normal_respects_bounds() {
        let mut rng = RngStream::new(5, 5);
        let mut v = vec![0f64; 10_000];
        rng.fill_truncated_normal(&mut v, 0.02);
        assert!(v.iter().all(|x| x.abs() <= 0.04));
    }
}
