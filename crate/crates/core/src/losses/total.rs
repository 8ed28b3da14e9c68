//! Combined student objective and the upstream gradients it injects.

use crate::error::{Error, Result};
use crate::losses::config::{DistillConfig, GraphMode, Strategy};
use crate::losses::graph::{affinity, AffinityGraph};
use crate::losses::hint::{hint_loss, FitNetAdapter};
use crate::losses::lp::{lp_grad, lp_grad_literal, lp_loss};
use crate::losses::soft::{kd_loss, soften_softmax, softmax};
use crate::nn::{ForwardTrace, Tensor};
use crate::scalar::Scalar;

/// Phase of the two-stage FitNet protocol. Ignored by other strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitnetStage {
    /// Adapter + student up to the guided layer regress the teacher hint.
    Hint,
    /// Soft-target distillation of the whole student.
    Distill,
}

#[derive(Debug, Clone)]
pub struct TotalLoss<T> {
    /// `ce + λ·kd + γ·lp + hint`
    pub value: T,
    pub ce: T,
    pub kd: T,
    pub lp: T,
    pub hint: T,
    /// Gradient injected at the student logits.
    pub logit_grad: Option<Tensor<T>>,
    /// Gradient injected at the student tap layer.
    pub tapped_grad: Option<Tensor<T>>,
    /// `(∂/∂W, ∂/∂b)` of the adapter during FitNet hint training.
    pub adapter_grads: Option<(Tensor<T>, Tensor<T>)>,
    pub graph: Option<AffinityGraph<T>>,
}

/// Evaluates the objective selected by `cfg.strategy`:
///
/// * `bp`: `H(y, P_S)`
/// * `kd`: `H(y, P_S) + λ·H(τ(P_T), τ(P_S))`
/// * `fitnet`: hint loss in [`FitnetStage::Hint`], `kd` in [`FitnetStage::Distill`]
/// * `lp`: `H(y, P_S) + λ·H(τ(P_T), τ(P_S)) + γ·L_LP`
///
/// The teacher trace is read only.
pub fn total_loss<T: Scalar>(
    labels: &[usize],
    student: &ForwardTrace<T>,
    teacher: Option<&ForwardTrace<T>>,
    adapter: Option<&FitNetAdapter<T>>,
    cfg: &DistillConfig,
    stage: FitnetStage,
) -> Result<TotalLoss<T>> {
    cfg.validate()?;
    let m = student.batch_size();
    if labels.len() != m {
        return Err(Error::shape("total_loss labels", &[m], &[labels.len()]));
    }
    let teacher = match (cfg.strategy.uses_teacher(), teacher) {
        (true, None) => {
            return Err(Error::arg("teacher", format!("strategy {} needs a teacher trace", cfg.strategy)))
        }
        (_, t) => t,
    };
    if let Some(t) = teacher {
        if t.batch_size() != m {
            return Err(Error::shape("teacher batch", &[m], &[t.batch_size()]));
        }
    }
    if cfg.strategy == Strategy::Fitnet && adapter.is_none() {
        return Err(Error::MissingAdapter);
    }
    let zero = T::zero();
    let mut out = TotalLoss {
        value: zero,
        ce: zero,
        kd: zero,
        lp: zero,
        hint: zero,
        logit_grad: None,
        tapped_grad: None,
        adapter_grads: None,
        graph: None,
    };

    if cfg.strategy == Strategy::Fitnet && stage == FitnetStage::Hint {
        let adapter = adapter.expect("checked above");
        let h = hint_loss(&student.tapped(), &teacher.expect("checked above").tapped(), adapter)?;
        out.hint = h.value;
        out.value = h.value;
        out.tapped_grad = Some(h.grad_features);
        out.adapter_grads = Some((h.grad_weight, h.grad_bias));
        return Ok(out);
    }

    let lambda = match cfg.strategy {
        Strategy::Bp => 0.0,
        _ => cfg.lambda,
    };
    let logits = student.logits();
    let p_s = softmax(logits)?;
    let (soft_t, soft_s) = match teacher {
        Some(t) if lambda > 0.0 => (
            soften_softmax(t.logits(), cfg.tau)?,
            soften_softmax(logits, cfg.tau)?,
        ),
        // Unused when λ = 0; pass P_S as a same-temperature placeholder.
        _ => {
            let placeholder = crate::losses::soft::SoftTargets {
                probs: p_s.clone(),
                temperature: cfg.tau,
            };
            (placeholder.clone(), placeholder)
        }
    };
    let kd = kd_loss(labels, &p_s, &soft_t, &soft_s, lambda)?;
    out.ce = kd.ce;
    out.kd = kd.kd;
    out.value = kd.value;
    out.logit_grad = Some(kd.logit_grad);

    if cfg.strategy == Strategy::Lp {
        let graph = affinity(&teacher.expect("checked above").tapped(), cfg)?;
        let f_s = student.tapped();
        out.lp = lp_loss(&f_s, &graph)?;
        if cfg.gamma > 0.0 {
            let gamma = T::from_f64_lossy(cfg.gamma);
            let grad = match cfg.graph {
                GraphMode::Symmetric => lp_grad(&f_s, &graph)?,
                GraphMode::Literal => lp_grad_literal(&f_s, &graph)?,
            };
            out.value += gamma * out.lp;
            out.tapped_grad = Some(grad.scale(gamma));
        }
        out.graph = Some(graph);
    }
    if !out.value.is_finite() {
        return Err(Error::NonFinite {
            context: format!("{} objective", cfg.strategy),
            value: out.value.as_f64(),
        });
    }
    Ok(out)
}
