//! Dynamic attention 3D convolution (DAC) and a fully dense 3D-DenseNet for
//! hyperspectral image classification.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] – rank-5 tensors and the differentiable primitives (3D
//!   convolution, pooling, batch norm, affine maps, softmax, cross-entropy),
//!   each with a hand-written backward pass.
//! * [`dac`] – the dynamic attention convolution layer and its analytical
//!   multiply-add cost model.
//! * [`densenet`] – the staged 3D-DenseNet built from DAC layers, plus the
//!   `DACN` checkpoint format.
//! * [`data`] – `HSC1` cube persistence, synthetic cubes, padding, stratified
//!   splits and patch extraction.
//! * [`train`] – optimizers, the training loop, OA/AA/Kappa metrics and the
//!   parameter / FLOPs auditor.

pub mod dac;
pub mod data;
pub mod densenet;
pub mod error;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
