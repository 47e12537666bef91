//! A deliberately small reverse-mode autodiff engine in f64.
//!
//! Covers exactly the ops needed by the style-transfer teacher and the toy
//! latent-diffusion model: convolutions, pooling/upsampling, group norm,
//! matmuls, softmax and Gram matrices (with an optional half-precision
//! simulation mode). Every op's adjoint is validated against central finite
//! differences in the test suite.

pub mod gradcheck;
pub mod image;
pub mod nn;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use nn::{Binding, Conv2d, CrossAttention, GroupNorm, Init, Linear, ParamId, ParamSet};
pub use optim::{Adam, AdamConfig, AdamW, AdamWState};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
