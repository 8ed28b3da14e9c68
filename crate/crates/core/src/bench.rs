//! Cost model and wall-clock measurement of the teacher–student bridge:
//! the kNN affinity / LP computation versus the FitNet adapter.

use std::fmt::Write as _;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{affinity_from_dists, hint_loss, lp_grad, lp_loss, pairwise_sq_dists_par};
use crate::losses::{DistillConfig, FitNetAdapter, Strategy};
use crate::nn::{Network, Tensor};

/// Minimum repetitions accepted by [`measure_bridge`].
pub const MIN_REPETITIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bridge {
    Lp,
    Fitnet,
}

impl FromStr for Bridge {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lp" => Ok(Bridge::Lp),
            "fitnet" => Ok(Bridge::Fitnet),
            _ => Err(format!("expected `lp` or `fitnet`, got {s:?}")),
        }
    }
}

/// Constant-free operation counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// `m²·d_T`
    pub lp_teacher_distances: u128,
    /// `k·m²`
    pub lp_knn_select: u128,
    /// `m²·d_S`
    pub lp_student_distances: u128,
    /// Sum of the three LP terms, `m²(d_S + d_T + k)`.
    pub lp_total: u128,
    /// `m·d_S·d_T`
    pub fitnet: u128,
    /// `m·d_S·d_T / (m²(d_S + d_T))`
    pub ratio: f64,
}

pub fn bridge_cost_model(m: usize, d_s: usize, d_t: usize, k: usize) -> Result<CostModel> {
    for (name, v) in [("m", m), ("dS", d_s), ("dT", d_t), ("k", k)] {
        if v == 0 {
            return Err(Error::arg(name, "must be positive"));
        }
    }
    let (m, ds, dt, k) = (m as u128, d_s as u128, d_t as u128, k as u128);
    let m2 = m * m;
    let fitnet = m * ds * dt;
    Ok(CostModel {
        lp_teacher_distances: m2 * dt,
        lp_knn_select: k * m2,
        lp_student_distances: m2 * ds,
        lp_total: m2 * (ds + dt + k),
        fitnet,
        ratio: fitnet as f64 / (m2 * (ds + dt)) as f64,
    })
}

/// Trainable parameters a strategy adds outside the student network.
pub fn param_overhead(strategy: Strategy, d_s: usize, d_t: usize, bias: bool) -> usize {
    match strategy {
        Strategy::Fitnet => d_s * d_t + if bias { d_t } else { 0 },
        Strategy::Bp | Strategy::Kd | Strategy::Lp => 0,
    }
}

/// Overhead for a concrete student/teacher pair, using their tap widths.
pub fn param_overhead_for<T: crate::Scalar>(student: &Network<T>, teacher: &Network<T>, strategy: Strategy) -> usize {
    param_overhead(strategy, student.tap_dim(), teacher.tap_dim(), true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub samples_s: Vec<f64>,
}

impl Timing {
    fn from_samples(mut sorted: Vec<f64>) -> Self {
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Timing {
            median_s: median,
            min_s: sorted[0],
            max_s: sorted[n - 1],
            samples_s: sorted,
        }
    }
}

fn random_features(m: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let data = (0..m * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::new(vec![m, d], data).unwrap()
}

/// Pinned random inputs for one bridge.
pub struct BridgeInputs {
    pub student: Tensor<f32>,
    pub teacher: Tensor<f32>,
    pub adapter: Option<FitNetAdapter<f32>>,
}

impl BridgeInputs {
    pub fn new(m: usize, d_s: usize, d_t: usize, bridge: Bridge, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let student = random_features(m, d_s, &mut rng);
        let teacher = random_features(m, d_t, &mut rng);
        let adapter = (bridge == Bridge::Fitnet).then(|| FitNetAdapter::init(d_s, d_t, seed ^ 1));
        BridgeInputs {
            student,
            teacher,
            adapter,
        }
    }
}

/// One bridge evaluation: everything from the two feature batches to the
/// gradient handed back to the student.
pub fn run_bridge(inputs: &BridgeInputs, cfg: &DistillConfig, threads: usize) -> Result<f32> {
    match &inputs.adapter {
        None => {
            let m = inputs.teacher.rows();
            let dists = pairwise_sq_dists_par(&inputs.teacher, threads);
            let graph = affinity_from_dists(&dists, m, cfg)?;
            let value = lp_loss(&inputs.student, &graph)?;
            let grad = lp_grad(&inputs.student, &graph)?;
            Ok(value + grad.data()[0])
        }
        Some(adapter) => {
            let out = hint_loss(&inputs.student, &inputs.teacher, adapter)?;
            Ok(out.value + out.grad_features.data()[0] + out.grad_weight.data()[0])
        }
    }
}

/// Median wall-clock of the bridge over `repetitions` timed runs after one
/// warm-up run.
pub fn measure_bridge(
    m: usize,
    d_s: usize,
    d_t: usize,
    k: usize,
    bridge: Bridge,
    repetitions: usize,
    threads: usize,
) -> Result<Timing> {
    if repetitions < MIN_REPETITIONS {
        return Err(Error::arg("reps", format!("need at least {MIN_REPETITIONS}, got {repetitions}")));
    }
    bridge_cost_model(m, d_s, d_t, k)?;
    if k >= m {
        return Err(Error::arg("k", format!("k = {k} needs m > k, got m = {m}")));
    }
    let cfg = DistillConfig {
        k,
        ..DistillConfig::default()
    };
    let inputs = BridgeInputs::new(m, d_s, d_t, bridge, 0x5eed);
    black_box(run_bridge(&inputs, &cfg, threads)?);
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        black_box(run_bridge(black_box(&inputs), &cfg, threads)?);
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(Timing::from_samples(samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeCostReport {
    pub m: usize,
    pub d_s: usize,
    pub d_t: usize,
    pub k: usize,
    pub model: CostModel,
    pub lp: Option<Timing>,
    pub fitnet: Option<Timing>,
    pub overhead_lp: usize,
    pub overhead_fitnet: usize,
}

impl BridgeCostReport {
    /// Analytic part only; timings are filled in by [`BridgeCostReport::measure`].
    pub fn analytic(m: usize, d_s: usize, d_t: usize, k: usize) -> Result<Self> {
        Ok(BridgeCostReport {
            m,
            d_s,
            d_t,
            k,
            model: bridge_cost_model(m, d_s, d_t, k)?,
            lp: None,
            fitnet: None,
            overhead_lp: param_overhead(Strategy::Lp, d_s, d_t, true),
            overhead_fitnet: param_overhead(Strategy::Fitnet, d_s, d_t, true),
        })
    }

    pub fn measure(mut self, repetitions: usize, threads: usize) -> Result<Self> {
        self.lp = Some(measure_bridge(self.m, self.d_s, self.d_t, self.k, Bridge::Lp, repetitions, threads)?);
        self.fitnet = Some(measure_bridge(
            self.m,
            self.d_s,
            self.d_t,
            self.k,
            Bridge::Fitnet,
            repetitions,
            threads,
        )?);
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn table(&self) -> String {
        let mc = &self.model;
        let mut s = String::new();
        let _ = writeln!(s, "m = {}  d_S = {}  d_T = {}  k = {}", self.m, self.d_s, self.d_t, self.k);
        let _ = writeln!(s, "{:<28}{:>20}", "term", "ops");
        let _ = writeln!(s, "{:<28}{:>20}", "lp teacher distances", mc.lp_teacher_distances);
        let _ = writeln!(s, "{:<28}{:>20}", "lp kNN select", mc.lp_knn_select);
        let _ = writeln!(s, "{:<28}{:>20}", "lp student distances", mc.lp_student_distances);
        let _ = writeln!(s, "{:<28}{:>20}", "lp total", mc.lp_total);
        let _ = writeln!(s, "{:<28}{:>20}", "fitnet adapter", mc.fitnet);
        let _ = writeln!(s, "{:<28}{:>20.2}", "ratio fitnet / lp", mc.ratio);
        let _ = writeln!(s, "{:<28}{:>20}", "params added (lp)", self.overhead_lp);
        let _ = writeln!(s, "{:<28}{:>20}", "params added (fitnet)", self.overhead_fitnet);
        for (name, t) in [("lp", &self.lp), ("fitnet", &self.fitnet)] {
            if let Some(t) = t {
                let _ = writeln!(
                    s,
                    "{:<28}{:>14.3} ms  [{:.3}, {:.3}]",
                    format!("{name} bridge median"),
                    t.median_s * 1e3,
                    t.min_s * 1e3,
                    t.max_s * 1e3
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_dims_equal_batch_gives_half() {
        let c = bridge_cost_model(64, 64, 64, 1).unwrap();
        assert_eq!(c.ratio, 0.5);
    }

    #[test]
    fn lp_total_is_sum_of_terms() {
        let c = bridge_cost_model(7, 11, 13, 3).unwrap();
        assert_eq!(c.lp_total, c.lp_teacher_distances + c.lp_knn_select + c.lp_student_distances);
        assert_eq!(c.lp_total, 49 * 27);
        assert_eq!(c.fitnet, 7 * 11 * 13);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(bridge_cost_model(0, 1, 1, 1).is_err());
        assert!(bridge_cost_model(4, 1, 1, 0).is_err());
    }

    #[test]
    fn overhead_without_bias() {
        assert_eq!(param_overhead(Strategy::Fitnet, 1, 1, false), 1);
        assert_eq!(param_overhead(Strategy::Kd, 100, 100, true), 0);
    }

    #[test]
    fn too_few_repetitions() {
        assert!(measure_bridge(8, 4, 4, 2, Bridge::Lp, 4, 1).is_err());
    }

    #[test]
    fn small_measurement_runs() {
        let t = measure_bridge(16, 8, 8, 3, Bridge::Fitnet, 5, 1).unwrap();
        assert!(t.min_s <= t.median_s && t.median_s <= t.max_s);
        assert_eq!(t.samples_s.len(), 5);
    }
}
