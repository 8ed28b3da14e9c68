//! Feature export for visualization and separability analysis.

use std::path::Path;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Network, Tensor};
use crate::scalar::{sq_dist, Scalar};
use crate::trainer::eval::EVAL_CHUNK;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingLayer {
    /// The network's tap layer.
    Tap,
    /// The input of the final (classifier) layer.
    Penultimate,
}

impl FromStr for EmbeddingLayer {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tap" => Ok(EmbeddingLayer::Tap),
            "penultimate" => Ok(EmbeddingLayer::Penultimate),
            _ => Err(format!("expected `tap` or `penultimate`, got {s:?}")),
        }
    }
}

/// One row per sample: id, label and a flattened feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    pub ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub features: Tensor<T>,
}

pub fn export_embeddings<T: Scalar>(
    net: &Network<T>,
    ds: &Dataset<T>,
    layer: EmbeddingLayer,
) -> Result<EmbeddingTable<T>> {
    let index = match layer {
        EmbeddingLayer::Tap => net.tap_index,
        EmbeddingLayer::Penultimate => {
            if net.layers.len() < 2 {
                return Err(Error::arg("layer", "network has no penultimate layer"));
            }
            net.layers.len() - 2
        }
    };
    let d: usize = net.layers[index].out_shape.iter().product();
    let mut data = Vec::with_capacity(ds.len() * d);
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = ds.batch(chunk);
        let trace = net.forward_through(&x, index)?;
        data.extend_from_slice(trace.outputs[index].data());
    }
    Ok(EmbeddingTable {
        ids: idx,
        labels: ds.labels.clone(),
        features: Tensor::new(vec![ds.len(), d], data)?,
    })
}

impl<T: Scalar + FromStr> EmbeddingTable<T> {
    pub fn dim(&self) -> usize {
        self.features.row_len()
    }

    /// Header `id,label,f0,..,f{d-1}`; reals use the shortest exact form.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..self.dim()).map(|c| format!("f{c}")));
        w.write_record(&header).map_err(csv_err)?;
        for (r, (&id, &label)) in self.ids.iter().zip(&self.labels).enumerate() {
            let mut rec = vec![id.to_string(), label.to_string()];
            rec.extend(self.features.row(r).iter().map(ToString::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
        let width = rdr.headers().map_err(csv_err)?.len();
        let d = width.checked_sub(2).ok_or(Error::Csv {
            line: 1,
            detail: "header needs id,label columns".into(),
        })?;
        let (mut ids, mut labels, mut data) = (Vec::new(), Vec::new(), Vec::new());
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let bad = |detail: String| Error::Csv { line: n + 2, detail };
            ids.push(rec[0].parse().map_err(|_| bad(format!("bad id {:?}", &rec[0])))?);
            labels.push(rec[1].parse().map_err(|_| bad(format!("bad label {:?}", &rec[1])))?);
            for f in rec.iter().skip(2) {
                data.push(f.parse::<T>().map_err(|_| bad(format!("bad value {f:?}")))?);
            }
        }
        let n = ids.len();
        Ok(EmbeddingTable {
            ids,
            labels,
            features: Tensor::new(vec![n, d], data)?,
        })
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Csv {
            line,
            detail: format!("{other:?}"),
        },
    }
}

/// Leave-one-out 1-nearest-neighbor accuracy of the labels in feature space
/// (ties go to the lower row index).
pub fn one_nn_accuracy<T: Scalar>(table: &EmbeddingTable<T>) -> f64 {
    let n = table.labels.len();
    if n < 2 {
        return 0.0;
    }
    let f = &table.features;
    let mut correct = 0usize;
    for i in 0..n {
        let fi = f.row(i);
        let mut best = (T::infinity(), usize::MAX);
        for j in (0..n).filter(|&j| j != i) {
            let d = sq_dist(fi, f.row(j));
            if d < best.0 {
                best = (d, j);
            }
        }
        if best.1 != usize::MAX && table.labels[best.1] == table.labels[i] {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}
