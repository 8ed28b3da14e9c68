use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::scalar::Scalar;

/// Samples per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub count: usize,
    pub correct: usize,
}

impl ClassAccuracy {
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub count: usize,
    pub per_class: Vec<ClassAccuracy>,
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 predictions for every sample.
pub fn predict<T: Scalar>(net: &Network<T>, ds: &Dataset<T>) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = ds.batch(chunk);
        let trace = net.forward(&x)?;
        let logits = trace.logits();
        preds.extend((0..chunk.len()).map(|i| argmax(logits.row(i))));
    }
    Ok(preds)
}

/// Top-1 accuracy with a per-class breakdown.
pub fn evaluate<T: Scalar>(net: &Network<T>, ds: &Dataset<T>) -> Result<Evaluation> {
    if net.class_count() != ds.classes {
        return Err(Error::arg(
            "classes",
            format!("network predicts {} classes, dataset has {}", net.class_count(), ds.classes),
        ));
    }
    let preds = predict(net, ds)?;
    let mut per_class: Vec<ClassAccuracy> = (0..ds.classes)
        .map(|class| ClassAccuracy { class, count: 0, correct: 0 })
        .collect();
    for (&p, &y) in preds.iter().zip(&ds.labels) {
        per_class[y].count += 1;
        if p == y {
            per_class[y].correct += 1;
        }
    }
    let correct: usize = per_class.iter().map(|c| c.correct).sum();
    Ok(Evaluation {
        accuracy: if ds.is_empty() { 0.0 } else { correct as f64 / ds.len() as f64 },
        count: ds.len(),
        per_class,
    })
}
