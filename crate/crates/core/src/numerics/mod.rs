//! Dense tensors, reverse-mode gradients and reproducible random streams.

mod rng;
mod scalar;
mod tape;
mod tensor;

pub use rng::{gaussian, philox4x32_10, RngStream};
pub use scalar::{DType, Scalar};
pub use tape::{BackwardMode, Tape, Var};
pub use tensor::{layer_norm_rows, matmul, softmax_rows, Tensor};
