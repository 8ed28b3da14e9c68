//! Mini-batch kNN affinity graph over teacher features.

use crate::error::{Error, Result};
use crate::losses::config::{DistillConfig, GraphMode, SigmaPolicy};
use crate::nn::Tensor;
use crate::scalar::{sq_dist, Scalar};

/// Lower bound applied to the batch-mean bandwidth σ².
pub const SIGMA_SQ_FLOOR: f64 = 1e-12;

/// Symmetric `m × m` matrix of squared Euclidean distances between rows
/// (zero diagonal).
pub fn pairwise_sq_dists<T: Scalar>(features: &Tensor<T>) -> Vec<T> {
    let m = features.rows();
    let mut d = vec![T::zero(); m * m];
    for i in 0..m {
        let fi = features.row(i);
        for j in i + 1..m {
            let v = sq_dist(fi, features.row(j));
            d[i * m + j] = v;
            d[j * m + i] = v;
        }
    }
    d
}

/// Same as [`pairwise_sq_dists`], splitting rows over `threads` scoped
/// threads. Each entry is computed identically, so the result is
/// bit-identical to the serial version.
pub fn pairwise_sq_dists_par<T: Scalar>(features: &Tensor<T>, threads: usize) -> Vec<T> {
    let m = features.rows();
    if threads <= 1 || m < 2 {
        return pairwise_sq_dists(features);
    }
    let mut d = vec![T::zero(); m * m];
    let chunk = m.div_ceil(threads);
    std::thread::scope(|s| {
        for (c, rows) in d.chunks_mut(chunk * m).enumerate() {
            s.spawn(move || {
                for (r, out) in rows.chunks_mut(m).enumerate() {
                    let i = c * chunk + r;
                    let fi = features.row(i);
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = if i == j {
                            T::zero()
                        } else if i < j {
                            sq_dist(fi, features.row(j))
                        } else {
                            sq_dist(features.row(j), fi)
                        };
                    }
                }
            });
        }
    });
    d
}

/// For every row the `k` nearest other rows of a precomputed distance
/// matrix, nearest first; ties go to the lower index.
pub fn knn_from_dists<T: Scalar>(dists: &[T], m: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k >= m {
        return Err(Error::arg(
            "k",
            format!("need 1 <= k <= m-1, got k={k} with batch size m={m}"),
        ));
    }
    let cmp = |a: &(T, usize), b: &(T, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    let mut cand: Vec<(T, usize)> = Vec::with_capacity(m - 1);
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        cand.clear();
        cand.extend((0..m).filter(|&j| j != i).map(|j| (dists[i * m + j], j)));
        cand.select_nth_unstable_by(k - 1, cmp);
        let nearest = &mut cand[..k];
        nearest.sort_unstable_by(cmp);
        out.push(nearest.iter().map(|&(_, j)| j).collect());
    }
    Ok(out)
}

pub fn knn_neighbors<T: Scalar>(features: &Tensor<T>, k: usize) -> Result<Vec<Vec<usize>>> {
    knn_from_dists(&pairwise_sq_dists(features), features.rows(), k)
}

/// Per-batch neighbor lists and Gaussian affinity weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph<T> {
    pub m: usize,
    /// `k` neighbor indices per row (self excluded), nearest first.
    pub neighbors: Vec<Vec<usize>>,
    /// Row-major `m × m` weights; zero outside the (symmetrized) kNN relation.
    pub weights: Vec<T>,
    pub symmetrized: bool,
    /// Kernel bandwidth σ² actually used.
    pub sigma_sq: T,
}

impl<T: Scalar> AffinityGraph<T> {
    pub fn weight(&self, i: usize, j: usize) -> T {
        self.weights[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.weights[i * self.m..(i + 1) * self.m]
    }

    /// First pair `(i, j)` with `α_ij ≠ α_ji`, if any.
    pub fn asymmetry(&self) -> Option<(usize, usize, T)> {
        for i in 0..self.m {
            for j in i + 1..self.m {
                let (a, b) = (self.weight(i, j), self.weight(j, i));
                if a != b {
                    return Some((i, j, (a - b).abs()));
                }
            }
        }
        None
    }

    pub fn nonzeros_in_row(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&v| v != T::zero()).count()
    }
}

/// `α_ij = exp(−‖f_T^i − f_T^j‖² / σ²)` for `j ∈ N(i)`, else 0, then
/// `α ← max(α, αᵀ)` unless the graph mode is literal.
pub fn affinity<T: Scalar>(teacher: &Tensor<T>, cfg: &DistillConfig) -> Result<AffinityGraph<T>> {
    affinity_from_dists(&pairwise_sq_dists(teacher), teacher.rows(), cfg)
}

pub fn affinity_from_dists<T: Scalar>(dists: &[T], m: usize, cfg: &DistillConfig) -> Result<AffinityGraph<T>> {
    let neighbors = knn_from_dists(dists, m, cfg.k)?;
    let sigma_sq = match cfg.sigma {
        SigmaPolicy::Fixed(s) => {
            if !(s > 0.0) {
                return Err(Error::arg("sigma", format!("fixed sigma must be > 0, got {s}")));
            }
            T::from_f64_lossy(s * s)
        }
        SigmaPolicy::BatchMean => {
            let mut sum = 0.0f64;
            for (i, nb) in neighbors.iter().enumerate() {
                for &j in nb {
                    sum += dists[i * m + j].as_f64();
                }
            }
            let mean = sum / (m * cfg.k) as f64;
            T::from_f64_lossy(mean.max(SIGMA_SQ_FLOOR))
        }
    };
    let mut weights = vec![T::zero(); m * m];
    for (i, nb) in neighbors.iter().enumerate() {
        for &j in nb {
            weights[i * m + j] = (-dists[i * m + j] / sigma_sq).exp();
        }
    }
    let symmetrized = cfg.graph == GraphMode::Symmetric;
    if symmetrized {
        for i in 0..m {
            for j in i + 1..m {
                let v = weights[i * m + j].max(weights[j * m + i]);
                weights[i * m + j] = v;
                weights[j * m + i] = v;
            }
        }
    }
    Ok(AffinityGraph {
        m,
        neighbors,
        weights,
        symmetrized,
        sigma_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len(), 1], v).unwrap()
    }

    #[test]
    fn one_dimensional_tie_goes_to_lower_index() {
        let nb = knn_neighbors(&col(&[0.0, 1.0, 2.0]), 1).unwrap();
        assert_eq!(nb, vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn identical_features_pick_lowest_other_indices() {
        let f = Tensor::<f64>::full(&[4, 3], 0.7);
        let nb = knn_neighbors(&f, 2).unwrap();
        assert_eq!(nb, vec![vec![1, 2], vec![0, 2], vec![0, 1], vec![0, 1]]);
    }

    #[test]
    fn k_must_be_below_batch_size() {
        assert!(knn_neighbors(&col(&[0.0, 1.0, 2.0]), 3).is_err());
        assert!(knn_neighbors(&col(&[0.0, 1.0, 2.0]), 0).is_err());
    }

    #[test]
    fn identical_features_give_unit_weights() {
        let f = Tensor::<f64>::full(&[5, 2], -1.5);
        let cfg = DistillConfig { k: 2, ..Default::default() };
        let g = affinity(&f, &cfg).unwrap();
        for (i, nb) in g.neighbors.iter().enumerate() {
            for &j in nb {
                assert_eq!(g.weight(i, j), 1.0);
            }
        }
    }

    #[test]
    fn distance_equal_to_sigma_sq_gives_inverse_e() {
        let cfg = DistillConfig {
            k: 1,
            sigma: SigmaPolicy::Fixed(2.0),
            ..Default::default()
        };
        let g = affinity(&col(&[0.0, 2.0]), &cfg).unwrap();
        assert!((g.weight(0, 1) - (-1f64).exp()).abs() < 1e-15);
        assert!((g.weight(0, 1) - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn symmetrization_and_literal_mode() {
        // 0 and 1 are mutual neighbors; 2 points at 1 but 1 does not point at 2.
        let f = col(&[0.0, 1.0, 3.0]);
        let sym = affinity(&f, &DistillConfig { k: 1, ..Default::default() }).unwrap();
        assert!(sym.asymmetry().is_none());
        assert!(sym.weight(1, 2) > 0.0);
        let lit = affinity(
            &f,
            &DistillConfig {
                k: 1,
                graph: GraphMode::Literal,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(lit.weight(1, 2), 0.0);
        assert!(lit.weight(2, 1) > 0.0);
        assert!(lit.asymmetry().is_some());
    }

    #[test]
    fn parallel_distances_match_serial_bitwise() {
        let vals: Vec<f32> = (0..7 * 13).map(|i| ((i * 37 % 101) as f32 - 50.0) * 0.01).collect();
        let f = Tensor::new(vec![7, 13], vals).unwrap();
        assert_eq!(pairwise_sq_dists(&f), pairwise_sq_dists_par(&f, 3));
    }
}
