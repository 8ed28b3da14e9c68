//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::nn::network::{GradientSet, Network};
use crate::scalar::Scalar;

/// A scalar objective over a network, able to produce both its value and its
/// analytic parameter gradient.
pub trait LossEvaluator<T: Scalar> {
    /// Loss value plus an activation-pattern signature; probes whose `+h` and
    /// `−h` signatures differ straddle a kink and are skipped.
    fn loss(&self, net: &Network<T>) -> Result<(T, u64)>;

    fn loss_and_grads(&self, net: &Network<T>) -> Result<(T, GradientSet<T>)>;
}

/// Worst discrepancy within one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    pub layer: usize,
    pub param: usize,
    pub kind: &'static str,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub params: Vec<ParamReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    pub fn failing(&self) -> impl Iterator<Item = &ParamReport> {
        self.params.iter().filter(|p| p.max_rel_error > self.tolerance)
    }
}

/// `|a − n| / max(1, |a|, |n|)`: relative for large gradients, absolute for
/// small ones where finite differences lose relative precision.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the analytic gradient of `eval` against central differences
/// `(L(θ+h) − L(θ−h)) / 2h` for every parameter entry.
pub fn grad_check<T: Scalar, E: LossEvaluator<T>>(
    net: &Network<T>,
    eval: &E,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::arg("step", "must be > 0"));
    }
    let (base, grads) = eval.loss_and_grads(net)?;
    if !base.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check base loss".into(),
            value: base.as_f64(),
        });
    }
    let h = T::from_f64_lossy(step);
    let mut probe = net.clone();
    let mut params = Vec::new();
    for (li, layer) in net.layers.iter().enumerate() {
        for (pi, p) in layer.params.iter().enumerate() {
            let analytic = grads.layers[li][pi].data();
            let mut rep = ParamReport {
                layer: li,
                param: pi,
                kind: layer.spec.kind_name(),
                max_rel_error: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
                checked: 0,
                skipped_kinks: 0,
            };
            for idx in 0..p.len() {
                let orig = p.data()[idx];
                probe.layers[li].params[pi].data_mut()[idx] = orig + h;
                let (lp, sp) = eval.loss(&probe)?;
                probe.layers[li].params[pi].data_mut()[idx] = orig - h;
                let (lm, sm) = eval.loss(&probe)?;
                probe.layers[li].params[pi].data_mut()[idx] = orig;
                if !lp.is_finite() || !lm.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("grad_check probe layer {li} param {pi}[{idx}]"),
                        value: if lp.is_finite() { lm.as_f64() } else { lp.as_f64() },
                    });
                }
                if sp != sm {
                    rep.skipped_kinks += 1;
                    continue;
                }
                // Use the actually representable perturbation width.
                let width = ((orig + h) - (orig - h)).as_f64();
                let numeric = (lp.as_f64() - lm.as_f64()) / width;
                let a = analytic[idx].as_f64();
                let err = relative_error(a, numeric);
                rep.checked += 1;
                if err > rep.max_rel_error {
                    rep.max_rel_error = err;
                    rep.worst_index = idx;
                    rep.analytic = a;
                    rep.numeric = numeric;
                }
            }
            params.push(rep);
        }
    }
    Ok(GradCheckReport {
        step,
        tolerance,
        params,
    })
}
