//! Multi-task knowledge distillation on synthetic chest-like images, with
//! Grad-CAM, Grad-CAM++, LIME and attention explanations rendered as
//! audience-specific stories.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for common uses.

pub mod autograd;
pub mod data;
pub mod distill;
pub mod error;
pub mod interpret;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod scalar;
pub mod story;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Precision used by the command-line pipeline.
pub type Real = f32;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Network32 = models::Network<f32>;
pub type Network64 = models::Network<f64>;
pub type Student32 = models::Student<f32>;
pub type Student64 = models::Student<f64>;
pub type Teacher32 = models::Teacher<f32>;
pub type Teacher64 = models::Teacher<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Graph64 = autograd::Graph<f64>;
