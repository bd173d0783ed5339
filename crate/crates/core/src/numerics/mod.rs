//! Dense tensors, hand-derived layer gradients, Adam, and a finite-difference
//! gradient oracle.

mod adam;
mod gradcheck;
mod ops;
mod params;
pub mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_EPS};
pub use ops::{affine_backward, affine_forward, binary_entropy, glorot_uniform, relu, sigmoid};
pub use params::ParamSet;
pub use rng::{derive_seed, seeded, SeededRng};
pub use tensor::Tensor;
