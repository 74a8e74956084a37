//! Point-cloud GAN with a tree-structured graph-convolution generator.
//!
//! The crate builds up from a small reverse-mode gradient engine
//! ([`graph`]) to the generator ([`treegcn`]), the Wasserstein critic
//! ([`critic`]), WGAN-GP training ([`training`]), evaluation metrics
//! including the Fréchet point cloud distance ([`metrics`]), dataset and
//! file-format handling ([`data`]), and tree-semantics utilities
//! ([`semantics`]).
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); concrete
//! aliases are exported at the crate root.

pub mod adam;
pub mod checkpoint;
pub mod critic;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod graph;
pub mod nn;
pub mod scalar;
pub mod semantics;
pub mod training;
pub mod treegcn;
pub(crate) mod wire;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};

/// 64-bit tensor: the precision every test and oracle runs at.
pub type Tensor64 = tensor::Tensor<f64>;
/// 32-bit tensor: the default training precision.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = graph::Graph<f64>;
pub type Graph32 = graph::Graph<f32>;
