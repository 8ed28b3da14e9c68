//! Teacher–student training with a locality preserving distillation loss.
//!
//! The crate is generic over the scalar type ([`Scalar`], implemented for
//! `f32` and `f64`); the aliases below fix it to `f32`, the training
//! precision.

// `!(x > 0.0)` rejects NaN too; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod losses;
pub mod nn;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Network32 = nn::Network<f32>;
pub type ForwardTrace32 = nn::ForwardTrace<f32>;
pub type GradientSet32 = nn::GradientSet<f32>;
pub type Dataset32 = data::Dataset<f32>;
pub type AffinityGraph32 = losses::AffinityGraph<f32>;
pub type FitNetAdapter32 = losses::FitNetAdapter<f32>;
