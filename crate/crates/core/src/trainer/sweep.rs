use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Architecture, Network};
use crate::scalar::Scalar;
use crate::trainer::embed::csv_err;
use crate::trainer::eval::evaluate;
use crate::trainer::run::{train_student, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub gamma: f64,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub ks: Vec<usize>,
    pub gammas: Vec<f64>,
}

impl SweepGrid {
    pub fn points(&self) -> Vec<(usize, f64)> {
        let mut v = Vec::with_capacity(self.ks.len() * self.gammas.len());
        for &k in &self.ks {
            for &g in &self.gammas {
                v.push((k, g));
            }
        }
        v
    }
}

/// Thread count from `LPKD_THREADS` (default 1).
pub fn env_threads() -> usize {
    std::env::var("LPKD_THREADS")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n: &usize| n >= 1)
        .unwrap_or(1)
}

/// Trains one student per (k, γ) grid point from the same seed and base
/// config. Points are independent; with `threads > 1` they run concurrently
/// but the output keeps grid order.
#[allow(clippy::too_many_arguments)]
pub fn sweep<T: Scalar>(
    student: &Architecture,
    teacher: &Network<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    test: Option<&Dataset<T>>,
    base: &TrainConfig,
    grid: &SweepGrid,
    threads: usize,
) -> Result<Vec<SweepPoint>> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::arg("sweep", "grid is empty"));
    }
    let run_point = |&(k, gamma): &(usize, f64)| -> Result<SweepPoint> {
        let mut cfg = base.clone();
        cfg.distill.k = k;
        cfg.distill.gamma = gamma;
        let net = Network::init(student, cfg.seed, cfg.init)?;
        let out = train_student(net, teacher, train, val, &cfg)?;
        let test_accuracy = match test {
            Some(ds) => Some(evaluate(&out.network, ds)?.accuracy),
            None => None,
        };
        Ok(SweepPoint {
            k,
            gamma,
            val_accuracy: out.record.best_val_accuracy.unwrap_or(0.0),
            test_accuracy,
        })
    };
    let threads = threads.clamp(1, points.len());
    if threads == 1 {
        return points.iter().map(run_point).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepPoint>>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= points.len() {
                    break;
                }
                let r = run_point(&points[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every grid point ran"))
        .collect()
}

/// Header `k,gamma,val_accuracy,test_accuracy`; a missing test accuracy is
/// left empty.
pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for p in points {
        w.serialize(p).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
