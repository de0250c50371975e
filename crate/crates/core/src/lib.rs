//! Layer-wise relevance propagation (LRP) for ResNet-style convolutional
//! networks.
//!
//! The crate runs a residual CNN forward, then pushes the predicted class
//! probability back to the input pixels with the z⁺ rule (or ε, or a
//! mixture), splitting relevance between skip and main path at every
//! Bottleneck merge. Relevance is conserved layer by layer under z⁺, and the
//! engine records checkpoint sums so this can be audited. The resulting
//! attribution map can be heat-quantized and scored with insertion/deletion
//! curves.
//!
//! Modules:
//! - [`tensor`], [`ops`]: dense tensors and forward kernels
//! - [`model`]: graph format, validation, PPM/PGM/CSV I/O, toy ResNets
//! - [`lrp`]: relevance rules, Relevance Splitting, Heat Quantization, `explain`
//! - [`eval`]: pixel ranking, insertion/deletion curves, ID score, conservation reports
//! - [`cli`]: the job runners behind the `relprop` binary

pub mod cli;
pub mod error;
pub mod eval;
pub mod lrp;
pub mod model;
pub mod ops;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{PoolIndices, Relevance, Tensor};
