//! Distillation objectives: soft targets, hint loss, affinity graph and the
//! locality preserving loss.

pub mod config;
pub mod graph;
pub mod hint;
pub mod lp;
pub mod soft;
pub mod total;

pub use config::{DistillConfig, GraphMode, SigmaPolicy, Strategy};
pub use graph::{
    affinity, affinity_from_dists, knn_from_dists, knn_neighbors, pairwise_sq_dists,
    pairwise_sq_dists_par, AffinityGraph,
};
pub use hint::{hint_loss, FitNetAdapter, HintLoss};
pub use lp::{lp_grad, lp_grad_literal, lp_loss};
pub use soft::{cross_entropy, kd_loss, one_hot, soften_softmax, softmax, KdLoss, SoftTargets};
pub use total::{total_loss, FitnetStage, TotalLoss};
