//! Locality preserving loss over student features.

use crate::error::{Error, Result};
use crate::losses::graph::AffinityGraph;
use crate::nn::Tensor;
use crate::scalar::{sq_dist, Scalar};

fn check<T: Scalar>(student: &Tensor<T>, graph: &AffinityGraph<T>) -> Result<()> {
    if student.rows() != graph.m {
        return Err(Error::shape("lp student features", &[graph.m], &[student.rows()]));
    }
    Ok(())
}

/// `(1/2m) · Σ_ij α_ij ‖f_S^i − f_S^j‖²`
pub fn lp_loss<T: Scalar>(student: &Tensor<T>, graph: &AffinityGraph<T>) -> Result<T> {
    check(student, graph)?;
    let m = graph.m;
    let mut total = 0.0f64;
    for i in 0..m {
        let fi = student.row(i);
        for (j, &a) in graph.row(i).iter().enumerate() {
            if a != T::zero() {
                total += (a * sq_dist(fi, student.row(j))).as_f64();
            }
        }
    }
    Ok(T::from_f64_lossy(total / (2 * m.max(1)) as f64))
}

/// `(c/m) · Σ_{j≠i} α_ij (f_S^i − f_S^j)` for every row `i`.
fn pair_grad<T: Scalar>(student: &Tensor<T>, graph: &AffinityGraph<T>, c: usize) -> Tensor<T> {
    let (m, d) = (graph.m, student.row_len());
    let inv_m = T::from_usize(c).unwrap() / T::from_usize(m.max(1)).unwrap();
    let mut grad = Tensor::zeros(&[m, d]);
    for i in 0..m {
        let fi = student.row(i);
        let g = grad.row_mut(i);
        for (j, &a) in graph.row(i).iter().enumerate() {
            if a != T::zero() && j != i {
                for ((gv, &fv), &fj) in g.iter_mut().zip(fi).zip(student.row(j)) {
                    *gv += a * (fv - fj);
                }
            }
        }
        for gv in g.iter_mut() {
            *gv *= inv_m;
        }
    }
    grad
}

/// Exact gradient of [`lp_loss`] for a symmetric graph:
/// `∂L_LP/∂f_S^i = (2/m) Σ_{j≠i} α_ij (f_S^i − f_S^j)`.
///
/// Every unordered pair appears twice in the loss's double sum, hence the
/// factor 2. An asymmetric graph is rejected; see [`lp_grad_literal`].
pub fn lp_grad<T: Scalar>(student: &Tensor<T>, graph: &AffinityGraph<T>) -> Result<Tensor<T>> {
    check(student, graph)?;
    if let Some((i, j, gap)) = graph.asymmetry() {
        return Err(Error::AsymmetricGraph { i, j, gap: gap.as_f64() });
    }
    Ok(pair_grad(student, graph, 2))
}

/// The pair formula as commonly written, `(1/m) Σ_{j≠i} α_ij (f_S^i − f_S^j)`,
/// applied to whatever weights the graph holds. On a symmetric graph this
/// is half of [`lp_grad`].
pub fn lp_grad_literal<T: Scalar>(student: &Tensor<T>, graph: &AffinityGraph<T>) -> Result<Tensor<T>> {
    check(student, graph)?;
    Ok(pair_grad(student, graph, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::config::{DistillConfig, GraphMode};
    use crate::losses::graph::affinity;

    fn two_point_graph() -> AffinityGraph<f64> {
        AffinityGraph {
            m: 2,
            neighbors: vec![vec![1], vec![0]],
            weights: vec![0.0, 0.5, 0.5, 0.0],
            symmetrized: true,
            sigma_sq: 1.0,
        }
    }

    #[test]
    fn two_point_value_and_gradient() {
        let f = Tensor::from_f64(&[2, 2], &[0.0, 0.0, 1.0, 0.0]).unwrap();
        let g = two_point_graph();
        assert!((lp_loss(&f, &g).unwrap() - 0.25).abs() < 1e-15);
        // L = (1 - x)^2 / 4 along f_1 = [x, 0].
        let grad = lp_grad(&f, &g).unwrap();
        assert_eq!(grad.row(0), &[-0.5, 0.0]);
        assert_eq!(grad.row(1), &[0.5, 0.0]);
        let literal = lp_grad_literal(&f, &g).unwrap();
        assert_eq!(literal.row(0), &[-0.25, 0.0]);
        assert_eq!(literal.row(1), &[0.25, 0.0]);
    }

    #[test]
    fn equal_features_give_zero() {
        let t = Tensor::from_f64(&[6, 2], &[0., 1., 2., 0., 5., 5., 1., 1., 3., 0., 2., 2.]).unwrap();
        let g = affinity(&t, &DistillConfig { k: 2, ..Default::default() }).unwrap();
        let f = Tensor::<f64>::full(&[6, 3], 0.3);
        assert_eq!(lp_loss(&f, &g).unwrap(), 0.0);
        assert_eq!(lp_grad(&f, &g).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn strict_gradient_rejects_asymmetric_graph() {
        let t = Tensor::<f64>::from_f64(&[3, 1], &[0.0, 1.0, 3.0]).unwrap();
        let cfg = DistillConfig {
            k: 1,
            graph: GraphMode::Literal,
            ..Default::default()
        };
        let g = affinity(&t, &cfg).unwrap();
        let f = Tensor::from_f64(&[3, 1], &[0.1, 0.2, 0.4]).unwrap();
        assert!(matches!(lp_grad(&f, &g), Err(Error::AsymmetricGraph { .. })));
        assert!(lp_grad_literal(&f, &g).is_ok());
    }

    #[test]
    fn batch_size_mismatch_rejected() {
        let f = Tensor::<f64>::zeros(&[3, 2]);
        assert!(lp_loss(&f, &two_point_graph()).is_err());
    }
}
