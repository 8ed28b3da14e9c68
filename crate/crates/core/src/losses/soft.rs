//! Softened softmax, cross-entropy and the soft-target distillation loss.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Probabilities are clamped to at least this before taking logs.
pub const LOG_EPS: f64 = 1e-12;

/// Row-wise `softmax(logits / τ)` together with the temperature used.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargets<T> {
    pub probs: Tensor<T>,
    pub temperature: f64,
}

pub fn soften_softmax<T: Scalar>(logits: &Tensor<T>, tau: f64) -> Result<SoftTargets<T>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::arg("tau", format!("temperature must be > 0, got {tau}")));
    }
    if logits.shape().len() != 2 {
        return Err(Error::shape("soften_softmax logits", &[logits.rows(), logits.row_len()], logits.shape()));
    }
    let inv = T::from_f64_lossy(1.0 / tau);
    let mut probs = logits.clone();
    for i in 0..probs.rows() {
        let row = probs.row_mut(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = ((*v - max) * inv).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(SoftTargets {
        probs,
        temperature: tau,
    })
}

pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(soften_softmax(logits, 1.0)?.probs)
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::arg("labels", format!("label {y} >= class count {classes}")));
        }
        t.row_mut(i)[y] = T::one();
    }
    Ok(t)
}

/// Batch mean of `−Σ_c target_c · ln(max(prob_c, ε))`.
pub fn cross_entropy<T: Scalar>(targets: &Tensor<T>, probs: &Tensor<T>) -> Result<T> {
    if targets.shape() != probs.shape() || targets.shape().len() != 2 {
        return Err(Error::shape("cross_entropy", targets.shape(), probs.shape()));
    }
    let m = targets.rows();
    if m == 0 {
        return Ok(T::zero());
    }
    let eps = T::from_f64_lossy(LOG_EPS);
    let mut total = 0.0f64;
    for i in 0..m {
        for (&t, &p) in targets.row(i).iter().zip(probs.row(i)) {
            if t != T::zero() {
                total -= (t * p.max(eps).ln()).as_f64();
            }
        }
    }
    Ok(T::from_f64_lossy(total / m as f64))
}

/// `−Σ p ln p` averaged over rows.
pub fn mean_entropy<T: Scalar>(probs: &Tensor<T>) -> Result<T> {
    cross_entropy(probs, probs)
}

#[derive(Debug, Clone)]
pub struct KdLoss<T> {
    /// `ce + λ·kd`
    pub value: T,
    /// `H(y, P_S)`
    pub ce: T,
    /// `H(τ(P_T), τ(P_S))`
    pub kd: T,
    /// Gradient of `value` with respect to the student logits.
    pub logit_grad: Tensor<T>,
}

/// `H(y, P_S) + λ·H(τ(P_T), τ(P_S))` and its gradient with respect to the
/// student logits. Teacher targets are constants.
pub fn kd_loss<T: Scalar>(
    labels: &[usize],
    student_probs: &Tensor<T>,
    soft_teacher: &SoftTargets<T>,
    soft_student: &SoftTargets<T>,
    lambda: f64,
) -> Result<KdLoss<T>> {
    if soft_teacher.temperature != soft_student.temperature {
        return Err(Error::arg(
            "tau",
            format!(
                "teacher temperature {} != student temperature {}",
                soft_teacher.temperature, soft_student.temperature
            ),
        ));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::arg("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    let (m, classes) = (student_probs.rows(), student_probs.row_len());
    if labels.len() != m {
        return Err(Error::shape("kd_loss labels", &[m], &[labels.len()]));
    }
    if soft_teacher.probs.shape() != student_probs.shape() || soft_student.probs.shape() != student_probs.shape() {
        return Err(Error::shape("kd_loss soft targets", student_probs.shape(), soft_teacher.probs.shape()));
    }
    let y = one_hot::<T>(labels, classes)?;
    let ce = cross_entropy(&y, student_probs)?;
    let kd = if lambda > 0.0 {
        cross_entropy(&soft_teacher.probs, &soft_student.probs)?
    } else {
        T::zero()
    };
    let lam = T::from_f64_lossy(lambda);
    let inv_m = T::one() / T::from_usize(m.max(1)).unwrap();
    let kd_scale = lam * inv_m / T::from_f64_lossy(soft_student.temperature);
    let mut grad = Tensor::zeros(&[m, classes]);
    for i in 0..m {
        let g = grad.row_mut(i);
        for c in 0..classes {
            let mut v = (student_probs.row(i)[c] - y.row(i)[c]) * inv_m;
            if lambda > 0.0 {
                v += kd_scale * (soft_student.probs.row(i)[c] - soft_teacher.probs.row(i)[c]);
            }
            g[c] = v;
        }
    }
    Ok(KdLoss {
        value: ce + lam * kd,
        ce,
        kd,
        logit_grad: grad,
    })
}
