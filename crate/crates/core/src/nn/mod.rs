//! Minimal differentiable network substrate.

pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod network;
pub mod optim;
pub mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, LossEvaluator, ParamReport};
pub use layer::{Layer, LayerSpec};
pub use network::{Architecture, ForwardTrace, GradientSet, InitScheme, Network};
pub use optim::{Optimizer, OptimizerConfig, UpdateRule};
pub use tensor::Tensor;
