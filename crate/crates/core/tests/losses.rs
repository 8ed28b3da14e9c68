use approx::assert_abs_diff_eq;
use lpkd_core::losses::{
    affinity, knn_neighbors, lp_grad, lp_loss, soften_softmax, total_loss, DistillConfig, FitnetStage, GraphMode,
    SigmaPolicy, Strategy as Method,
};
use lpkd_core::nn::{Architecture, InitScheme, LayerSpec, Network, Tensor};
use proptest::prelude::*;

fn matrix(m: usize, d: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-3.0f64..3.0, m * d).prop_map(move |v| Tensor::new(vec![m, d], v).unwrap())
}

fn batch_and_k() -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>, usize)> {
    (3usize..24, 1usize..12, 1usize..6).prop_flat_map(|(m, dt, ds)| (matrix(m, dt), matrix(m, ds), 1..m))
}

fn brute_knn(f: &Tensor<f64>, k: usize) -> Vec<Vec<usize>> {
    let m = f.rows();
    (0..m)
        .map(|i| {
            let mut c: Vec<(f64, usize)> = (0..m)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = f.row(i).iter().zip(f.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, j)
                })
                .collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            c.iter().take(k).map(|x| x.1).collect()
        })
        .collect()
}

proptest! {
    #[test]
    fn soft_targets_rows_sum_to_one(
        logits in prop::collection::vec(-1e4f32..1e4, 4 * 7),
        tau in 0.1f64..10.0,
    ) {
        let t = Tensor::new(vec![4, 7], logits).unwrap();
        let s = soften_softmax(&t, tau).unwrap();
        for i in 0..4 {
            let sum: f32 = s.probs.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6, "row {} sums to {}", i, sum);
            prop_assert!(s.probs.row(i).iter().all(|p| p.is_finite() && *p >= 0.0));
        }
    }

    #[test]
    fn higher_temperature_never_sharpens(
        logits in prop::collection::vec(-5.0f64..5.0, 6),
        t1 in 0.1f64..5.0,
        dt in 0.0f64..5.0,
    ) {
        let t = Tensor::new(vec![1, 6], logits).unwrap();
        let entropy = |tau: f64| -> f64 {
            let p = soften_softmax(&t, tau).unwrap().probs;
            -p.data().iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>()
        };
        prop_assert!(entropy(t1 + dt) >= entropy(t1) - 1e-12);
    }

    #[test]
    fn knn_matches_exhaustive_search((t, _s, k) in batch_and_k()) {
        prop_assert_eq!(knn_neighbors(&t, k).unwrap(), brute_knn(&t, k));
    }

    #[test]
    fn affinity_invariants((t, _s, k) in batch_and_k()) {
        let literal = affinity(&t, &DistillConfig { k, graph: GraphMode::Literal, ..Default::default() }).unwrap();
        let sym = affinity(&t, &DistillConfig { k, ..Default::default() }).unwrap();
        let m = t.rows();
        for i in 0..m {
            prop_assert_eq!(literal.weight(i, i), 0.0);
            prop_assert!(literal.nonzeros_in_row(i) <= k);
            prop_assert_eq!(literal.neighbors[i].len(), k);
            for j in 0..m {
                let a = sym.weight(i, j);
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert_eq!(a, sym.weight(j, i));
                prop_assert_eq!(a, literal.weight(i, j).max(literal.weight(j, i)));
            }
        }
        prop_assert!(sym.asymmetry().is_none());
    }

    #[test]
    fn batch_mean_affinity_is_scale_invariant((t, s, k) in batch_and_k(), c in 0.01f64..100.0) {
        let cfg = DistillConfig { k, sigma: SigmaPolicy::BatchMean, ..Default::default() };
        let a = affinity(&t, &cfg).unwrap();
        let b = affinity(&t.scale(c), &cfg).unwrap();
        prop_assert_eq!(&a.neighbors, &b.neighbors);
        for (x, y) in a.weights.iter().zip(&b.weights) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        let (la, lb) = (lp_loss(&s, &a).unwrap(), lp_loss(&s, &b).unwrap());
        prop_assert!((la - lb).abs() <= 1e-9 * la.max(1.0));
    }

    #[test]
    fn permuting_the_batch_permutes_the_graph((t, s, k) in batch_and_k(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let m = t.rows();
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let cfg = DistillConfig { k, ..Default::default() };
        let g = affinity(&t, &cfg).unwrap();
        let gp = affinity(&t.select_rows(&perm), &cfg).unwrap();
        // Tie-breaking by index can legitimately change which of two equidistant
        // neighbors is kept, so compare weights only when no ties exist.
        let has_ties = (0..m).any(|i| {
            let mut d: Vec<f64> = (0..m).filter(|&j| j != i).map(|j| {
                t.row(i).iter().zip(t.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
            }).collect();
            d.sort_by(f64::total_cmp);
            d.windows(2).any(|w| w[0] == w[1])
        });
        if !has_ties {
            for a in 0..m {
                for b in 0..m {
                    prop_assert!((gp.weight(a, b) - g.weight(perm[a], perm[b])).abs() <= 1e-12);
                }
            }
            let (l, lp) = (lp_loss(&s, &g).unwrap(), lp_loss(&s.select_rows(&perm), &gp).unwrap());
            prop_assert!((l - lp).abs() <= 1e-9 * l.max(1.0));
        }
    }

    #[test]
    fn lp_loss_is_nonnegative_and_gradient_matches_differences((t, s, k) in batch_and_k()) {
        let g = affinity(&t, &DistillConfig { k, ..Default::default() }).unwrap();
        let base = lp_loss(&s, &g).unwrap();
        prop_assert!(base >= 0.0);
        let grad = lp_grad(&s, &g).unwrap();
        let h = 1e-6;
        for idx in 0..s.len() {
            let mut p = s.clone();
            p.data_mut()[idx] += h;
            let mut q = s.clone();
            q.data_mut()[idx] -= h;
            let num = (lp_loss(&p, &g).unwrap() - lp_loss(&q, &g).unwrap()) / (2.0 * h);
            let a = grad.data()[idx];
            prop_assert!((a - num).abs() <= 1e-6 * a.abs().max(1.0), "{} vs {}", a, num);
        }
    }

    #[test]
    fn lp_vanishes_when_components_are_constant((t, _s, k) in batch_and_k(), d in 1usize..4) {
        let g = affinity(&t, &DistillConfig { k, ..Default::default() }).unwrap();
        let m = g.m;
        // Label connected components, then give each one a constant feature.
        let mut comp: Vec<usize> = (0..m).collect();
        fn root(c: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while c[r] != r { r = c[r]; }
            c[i] = r;
            r
        }
        for i in 0..m {
            for j in 0..m {
                if g.weight(i, j) > 0.0 {
                    let (a, b) = (root(&mut comp, i), root(&mut comp, j));
                    comp[a] = b;
                }
            }
        }
        let mut f = Vec::with_capacity(m * d);
        for i in 0..m {
            let r = root(&mut comp, i) as f64;
            f.extend((0..d).map(|c| r * 0.37 + c as f64));
        }
        let f = Tensor::new(vec![m, d], f).unwrap();
        prop_assert_eq!(lp_loss(&f, &g).unwrap(), 0.0);
    }
}

fn tiny_pair() -> (Network<f64>, Network<f64>) {
    use LayerSpec::*;
    let s = Architecture::new(
        vec![4],
        vec![Dense { inputs: 4, outputs: 6 }, Relu, Dense { inputs: 6, outputs: 2 }, Dense { inputs: 2, outputs: 3 }],
        2,
    );
    let t = Architecture::new(vec![4], vec![Dense { inputs: 4, outputs: 5 }, Relu, Dense { inputs: 5, outputs: 3 }], 1);
    let u = InitScheme::Uniform { low: -0.7, high: 0.7 };
    (Network::init(&s, 3, u).unwrap(), Network::init(&t, 4, u).unwrap())
}

#[test]
fn total_loss_is_sum_of_weighted_terms() {
    let (student, teacher) = tiny_pair();
    let x = Tensor::from_f64(&[8, 4], &(0..32).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect::<Vec<_>>()).unwrap();
    let labels = vec![0, 1, 2, 0, 1, 2, 0, 1];
    let (st, tt) = (student.forward(&x).unwrap(), teacher.forward(&x).unwrap());
    for (lambda, gamma) in [(2.0, 1.0), (0.5, 3.0), (0.0, 0.0), (1.0, 0.0)] {
        let cfg = DistillConfig { lambda, gamma, k: 3, ..Default::default() };
        let l = total_loss(&labels, &st, Some(&tt), None, &cfg, FitnetStage::Distill).unwrap();
        assert_abs_diff_eq!(l.value, l.ce + lambda * l.kd + gamma * l.lp, epsilon = 1e-6);
        let g = affinity(&tt.tapped(), &cfg).unwrap();
        assert_abs_diff_eq!(l.lp, lp_loss(&st.tapped(), &g).unwrap(), epsilon = 1e-12);
    }
}

#[test]
fn switched_off_lp_equals_plain_cross_entropy() {
    let (student, teacher) = tiny_pair();
    let x = Tensor::from_f64(&[6, 4], &(0..24).map(|i| (i as f64).sin()).collect::<Vec<_>>()).unwrap();
    let labels = vec![2, 1, 0, 0, 1, 2];
    let (st, tt) = (student.forward(&x).unwrap(), teacher.forward(&x).unwrap());
    let off = DistillConfig { lambda: 0.0, gamma: 0.0, k: 2, ..Default::default() };
    let bp = DistillConfig { strategy: Method::Bp, ..off };
    let a = total_loss(&labels, &st, Some(&tt), None, &off, FitnetStage::Distill).unwrap();
    let b = total_loss(&labels, &st, None, None, &bp, FitnetStage::Distill).unwrap();
    assert_eq!(a.value, b.value);
    assert_eq!(a.logit_grad, b.logit_grad);
}

#[test]
fn knn_matches_exhaustive_search_at_m64_d10() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(64);
    for _ in 0..10 {
        let t = Tensor::new(vec![64, 10], (0..640).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        for k in [1, 5, 63] {
            assert_eq!(knn_neighbors(&t, k).unwrap(), brute_knn(&t, k));
        }
    }
}

#[test]
fn fixed_sigma_is_used_verbatim() {
    let t = Tensor::<f64>::from_f64(&[3, 1], &[0.0, 2.0, 5.0]).unwrap();
    let g = affinity(&t, &DistillConfig { k: 1, sigma: SigmaPolicy::Fixed(2.0), ..Default::default() }).unwrap();
    assert_eq!(g.sigma_sq, 4.0);
    assert_abs_diff_eq!(g.weight(0, 1), (-1.0f64).exp(), epsilon = 1e-15);
}
