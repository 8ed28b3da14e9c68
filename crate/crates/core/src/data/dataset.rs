use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::idx::read_idx;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Labelled samples: inputs `[n × sample_shape]` and class indices `< classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Tensor<T>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::shape("dataset labels", &[inputs.rows()], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::arg("labels", format!("label {bad} >= class count {classes}")));
        }
        Ok(Dataset {
            inputs,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn select(&self, idx: &[usize], split: Split) -> Self {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split,
        }
    }

    /// First `n` samples in file order (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx, self.split)
    }

    /// Batch of samples by index.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<T>, Vec<usize>) {
        (
            self.inputs.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Inserts a channel axis so `[n, H, W]` images become `[n, 1, H, W]`.
    pub fn with_channel_axis(mut self) -> Result<Self> {
        if self.inputs.shape().len() == 3 {
            let s = self.inputs.shape().to_vec();
            self.inputs = self.inputs.reshape(&[s[0], 1, s[1], s[2]])?;
        }
        Ok(self)
    }
}

/// Holds out the last `count` samples (file order) as validation.
pub fn split_validation<T: Scalar>(ds: &Dataset<T>, count: usize) -> Result<(Dataset<T>, Dataset<T>)> {
    let n = ds.len();
    if count >= n {
        return Err(Error::arg("val_count", format!("{count} must be < dataset size {n}")));
    }
    let train: Vec<usize> = (0..n - count).collect();
    let val: Vec<usize> = (n - count..n).collect();
    Ok((ds.select(&train, Split::Train), ds.select(&val, Split::Val)))
}

/// Seeded mini-batch schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub seed: u64,
    pub batch_size: usize,
    pub drop_last: bool,
}

impl BatchPlan {
    /// Index batches for one epoch: a seeded permutation of `0..n` cut into
    /// chunks of `batch_size`. Same seed and epoch give the same batches.
    pub fn batches(&self, n: usize, epoch: usize) -> Result<Vec<Vec<usize>>> {
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::arg(
                "m",
                format!("batch size {} must lie in 1..={n}", self.batch_size),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        Ok(perm
            .chunks(self.batch_size)
            .filter(|c| !self.drop_last || c.len() == self.batch_size)
            .map(<[usize]>::to_vec)
            .collect())
    }
}

/// Materialized `(inputs, labels)` batches for one epoch.
pub fn make_batches<T: Scalar>(
    ds: &Dataset<T>,
    plan: &BatchPlan,
    epoch: usize,
) -> Result<Vec<(Tensor<T>, Vec<usize>)>> {
    Ok(plan
        .batches(ds.len(), epoch)?
        .iter()
        .map(|idx| ds.batch(idx))
        .collect())
}

/// Gaussian clusters around `classes` centers spaced evenly on a circle of
/// radius 10 in the first two coordinates; samples are shuffled.
pub fn gen_blobs<T: Scalar>(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset<T>> {
    if classes < 2 {
        return Err(Error::arg("classes", "need at least 2 classes"));
    }
    if dim < 2 {
        return Err(Error::arg("dim", "need at least 2 dimensions"));
    }
    if !(spread > 0.0) {
        return Err(Error::arg("spread", "must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).map_err(|e| Error::arg("spread", e.to_string()))?;
    let mut rows: Vec<(Vec<T>, usize)> = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let angle = std::f64::consts::TAU * c as f64 / classes as f64;
        let mut center = vec![0.0; dim];
        center[0] = 10.0 * angle.cos();
        center[1] = 10.0 * angle.sin();
        for v in center.iter_mut().skip(2) {
            *v = rng.random_range(-1.0..1.0);
        }
        for _ in 0..per_class {
            let x = center
                .iter()
                .map(|&mu| T::from_f64_lossy(mu + noise.sample(&mut rng)))
                .collect();
            rows.push((x, c));
        }
    }
    rows.shuffle(&mut rng);
    let labels = rows.iter().map(|r| r.1).collect();
    let data = rows.into_iter().flat_map(|r| r.0).collect();
    Dataset::new(Tensor::new(vec![classes * per_class, dim], data)?, labels, classes, Split::Train)
}

/// MNIST from a directory holding the four standard IDX files (optionally
/// `.gz`). Returns `(train, test)` with inputs `[n, 1, 28, 28]` in `[0, 1]`.
pub fn load_mnist<T: Scalar>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>)> {
    let find = |stem: &str| -> Result<std::path::PathBuf> {
        for name in [stem.to_string(), format!("{stem}.gz")] {
            let p = dir.join(name);
            if p.exists() {
                return Ok(p);
            }
        }
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} not found in {}", stem, dir.display()),
        )))
    };
    let load = |img: &str, lab: &str, split| -> Result<Dataset<T>> {
        let x = read_idx(&find(img)?)?.to_tensor::<T>()?;
        let y = read_idx(&find(lab)?)?.labels()?;
        Dataset::new(x, y, 10, split)?.with_channel_axis()
    };
    Ok((
        load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", Split::Train)?,
        load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", Split::Test)?,
    ))
}
