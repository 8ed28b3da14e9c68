//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Lists are comma separated. [`RunConfig::snapshot`] writes every key back
//! out so the snapshot can be fed in again as a config file.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{gen_blobs, load_mnist, split_validation, Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::{DistillConfig, GraphMode, SigmaPolicy, Strategy};
use crate::nn::{Architecture, InitScheme, OptimizerConfig, UpdateRule};
use crate::scalar::Scalar;
use crate::trainer::presets;
use crate::trainer::{SweepGrid, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Blobs,
}

impl Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Blobs => "blobs",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "blobs" => Ok(DatasetKind::Blobs),
            _ => Err(format!("expected `mnist` or `blobs`, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    RmsProp,
    Sgd,
}

impl Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(format!("expected `rmsprop` or `sgd`, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Uniform,
    Scaled,
}

impl Display for InitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitKind::Uniform => "uniform",
            InitKind::Scaled => "scaled",
        })
    }
}

impl FromStr for InitKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(InitKind::Uniform),
            "scaled" => Ok(InitKind::Scaled),
            _ => Err(format!("expected `uniform` or `scaled`, got {s:?}")),
        }
    }
}

/// Every knob of a run. Field names are the config keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub strategy: Strategy,
    pub k: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Mini-batch size.
    pub m: usize,
    pub epochs: usize,
    pub sigma: SigmaPolicy,
    pub graph: GraphMode,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// RMSProp decay of the squared-gradient average.
    pub rho: f64,
    pub eps: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub init: InitKind,
    /// Half-width `a` of `U(-a, a)` when `init = uniform`.
    pub init_scale: f64,
    pub eval_every: usize,
    pub fitnet_hint_fraction: f64,
    pub dataset: DatasetKind,
    pub mnist_dir: PathBuf,
    /// Training samples kept from the front of the training file (0 = all).
    pub train_subset: usize,
    /// Samples held out from the end of the training file for validation.
    pub val_count: usize,
    /// Test samples used (0 = all).
    pub test_subset: usize,
    pub teacher_arch: String,
    pub student_arch: String,
    /// Tap layer overrides; `None` keeps the preset's tap.
    pub teacher_tap: Option<usize>,
    pub student_tap: Option<usize>,
    pub blobs_classes: usize,
    pub blobs_per_class: usize,
    pub blobs_dim: usize,
    pub blobs_spread: f64,
    pub sweep_k: Vec<usize>,
    pub sweep_gamma: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            strategy: Strategy::Lp,
            k: 5,
            gamma: 1.0,
            lambda: 2.0,
            tau: 0.5,
            m: 128,
            epochs: 20,
            sigma: SigmaPolicy::BatchMean,
            graph: GraphMode::Symmetric,
            optimizer: OptimizerKind::RmsProp,
            lr: 0.0005,
            rho: 0.9,
            eps: 1e-8,
            momentum: 0.0,
            weight_decay: 0.0,
            init: InitKind::Scaled,
            init_scale: 0.005,
            eval_every: 1,
            fitnet_hint_fraction: 1.0 / 3.0,
            dataset: DatasetKind::Mnist,
            mnist_dir: PathBuf::from("data/mnist"),
            train_subset: 10_000,
            val_count: 5_000,
            test_subset: 0,
            teacher_arch: "mnist-teacher".into(),
            student_arch: "mnist-student".into(),
            teacher_tap: None,
            student_tap: None,
            blobs_classes: 4,
            blobs_per_class: 250,
            blobs_dim: 8,
            blobs_spread: 1.0,
            sweep_k: vec![1, 3, 5, 10],
            sweep_gamma: vec![0.1, 1.0, 10.0],
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: Display,
{
    value.parse::<V>().map_err(|e| Error::Config {
        key: key.to_string(),
        detail: format!("cannot parse {value:?}: {e}"),
    })
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>>
where
    V::Err: Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_tap(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "preset" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<V: Display>(v: &[V]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every accepted key, in snapshot order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "strategy",
        "k",
        "gamma",
        "lambda",
        "tau",
        "m",
        "epochs",
        "sigma",
        "graph",
        "optimizer",
        "lr",
        "rho",
        "eps",
        "momentum",
        "weight_decay",
        "init",
        "init_scale",
        "eval_every",
        "fitnet_hint_fraction",
        "dataset",
        "mnist_dir",
        "train_subset",
        "val_count",
        "test_subset",
        "teacher_arch",
        "student_arch",
        "teacher_tap",
        "student_tap",
        "blobs_classes",
        "blobs_per_class",
        "blobs_dim",
        "blobs_spread",
        "sweep_k",
        "sweep_gamma",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "strategy" => self.strategy = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "m" => self.m = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "sigma" => self.sigma = parse(key, v)?,
            "graph" => self.graph = parse(key, v)?,
            "optimizer" => self.optimizer = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "rho" => self.rho = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "init" => self.init = parse(key, v)?,
            "init_scale" => self.init_scale = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "fitnet_hint_fraction" => self.fitnet_hint_fraction = parse(key, v)?,
            "dataset" => self.dataset = parse(key, v)?,
            "mnist_dir" => self.mnist_dir = PathBuf::from(v),
            "train_subset" => self.train_subset = parse(key, v)?,
            "val_count" => self.val_count = parse(key, v)?,
            "test_subset" => self.test_subset = parse(key, v)?,
            "teacher_arch" => self.teacher_arch = v.to_string(),
            "student_arch" => self.student_arch = v.to_string(),
            "teacher_tap" => self.teacher_tap = parse_tap(key, v)?,
            "student_tap" => self.student_tap = parse_tap(key, v)?,
            "blobs_classes" => self.blobs_classes = parse(key, v)?,
            "blobs_per_class" => self.blobs_per_class = parse(key, v)?,
            "blobs_dim" => self.blobs_dim = parse(key, v)?,
            "blobs_spread" => self.blobs_spread = parse(key, v)?,
            "sweep_k" => self.sweep_k = parse_list(key, v)?,
            "sweep_gamma" => self.sweep_gamma = parse_list(key, v)?,
            _ => {
                return Err(Error::Config {
                    key: key.to_string(),
                    detail: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let tap = |t: Option<usize>| t.map_or("preset".to_string(), |v| v.to_string());
        Some(match key {
            "seed" => self.seed.to_string(),
            "strategy" => self.strategy.to_string(),
            "k" => self.k.to_string(),
            "gamma" => self.gamma.to_string(),
            "lambda" => self.lambda.to_string(),
            "tau" => self.tau.to_string(),
            "m" => self.m.to_string(),
            "epochs" => self.epochs.to_string(),
            "sigma" => self.sigma.to_string(),
            "graph" => self.graph.to_string(),
            "optimizer" => self.optimizer.to_string(),
            "lr" => self.lr.to_string(),
            "rho" => self.rho.to_string(),
            "eps" => self.eps.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "init" => self.init.to_string(),
            "init_scale" => self.init_scale.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "fitnet_hint_fraction" => self.fitnet_hint_fraction.to_string(),
            "dataset" => self.dataset.to_string(),
            "mnist_dir" => self.mnist_dir.display().to_string(),
            "train_subset" => self.train_subset.to_string(),
            "val_count" => self.val_count.to_string(),
            "test_subset" => self.test_subset.to_string(),
            "teacher_arch" => self.teacher_arch.clone(),
            "student_arch" => self.student_arch.clone(),
            "teacher_tap" => tap(self.teacher_tap),
            "student_tap" => tap(self.student_tap),
            "blobs_classes" => self.blobs_classes.to_string(),
            "blobs_per_class" => self.blobs_per_class.to_string(),
            "blobs_dim" => self.blobs_dim.to_string(),
            "blobs_spread" => self.blobs_spread.to_string(),
            "sweep_k" => join(&self.sweep_k),
            "sweep_gamma" => join(&self.sweep_gamma),
            _ => return None,
        })
    }

    /// Parses config text on top of the defaults. Later lines win.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                detail: format!("line {}: expected `key = value`", n + 1),
            })?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }

    /// Config file (if any), then `overrides` in order, then validation.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config {
                    key: "config".into(),
                    detail: format!("{}: {e}", p.display()),
                })?;
                RunConfig::parse_str(&text)?
            }
            None => RunConfig::default(),
        };
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// One `key = value` line per key.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            s.push_str(key);
            s.push_str(" = ");
            s.push_str(&self.get(key).expect("every listed key has a value"));
            s.push('\n');
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::arg("init_scale", "must be finite and >= 0"));
        }
        if self.sweep_k.is_empty() || self.sweep_gamma.is_empty() {
            return Err(Error::arg("sweep_k", "sweep grid must be nonempty"));
        }
        if self.blobs_classes < 2 {
            return Err(Error::arg("blobs_classes", "need at least 2 classes"));
        }
        if self.blobs_dim < 2 {
            return Err(Error::arg("blobs_dim", "need at least 2 dimensions"));
        }
        if !(self.blobs_spread > 0.0) {
            return Err(Error::arg("blobs_spread", "must be > 0"));
        }
        for (key, name) in [("teacher_arch", &self.teacher_arch), ("student_arch", &self.student_arch)] {
            presets::by_name(name, 2, 2).map_err(|e| Error::Config {
                key: key.into(),
                detail: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            tau: self.tau,
            lambda: self.lambda,
            gamma: self.gamma,
            k: self.k,
            sigma: self.sigma,
            graph: self.graph,
            strategy: self.strategy,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let rule = match self.optimizer {
            OptimizerKind::RmsProp => UpdateRule::RmsProp {
                decay: self.rho,
                eps: self.eps,
            },
            OptimizerKind::Sgd => UpdateRule::Sgd {
                momentum: self.momentum,
            },
        };
        OptimizerConfig {
            rule,
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
        }
    }

    pub fn init_scheme(&self) -> InitScheme {
        match self.init {
            InitKind::Uniform => InitScheme::Uniform {
                low: -self.init_scale,
                high: self.init_scale,
            },
            InitKind::Scaled => InitScheme::Scaled,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.m,
            optimizer: self.optimizer_config(),
            seed: self.seed,
            init: self.init_scheme(),
            distill: self.distill_config(),
            eval_every: self.eval_every,
            fitnet_hint_fraction: self.fitnet_hint_fraction,
        }
    }

    pub fn sweep_grid(&self) -> SweepGrid {
        SweepGrid {
            ks: self.sweep_k.clone(),
            gammas: self.sweep_gamma.clone(),
        }
    }

    fn input_dim(&self) -> usize {
        match self.dataset {
            DatasetKind::Mnist => 28 * 28,
            DatasetKind::Blobs => self.blobs_dim,
        }
    }

    fn classes(&self) -> usize {
        match self.dataset {
            DatasetKind::Mnist => 10,
            DatasetKind::Blobs => self.blobs_classes,
        }
    }

    fn arch(&self, name: &str, tap: Option<usize>) -> Result<Architecture> {
        let mut arch = presets::by_name(name, self.input_dim(), self.classes())?;
        if let Some(t) = tap {
            arch.tap_index = t;
        }
        arch.shapes()?;
        Ok(arch)
    }

    pub fn teacher_architecture(&self) -> Result<Architecture> {
        self.arch(&self.teacher_arch, self.teacher_tap)
    }

    pub fn student_architecture(&self) -> Result<Architecture> {
        self.arch(&self.student_arch, self.student_tap)
    }

    /// Train / validation / test splits for the configured dataset.
    ///
    /// MNIST: validation is the last `val_count` samples of the training
    /// file, training is the first `train_subset` of the rest. Blobs: one
    /// draw of `classes · per_class` points (seed = `seed`), split 60/20/20.
    pub fn load_data<T: Scalar>(&self) -> Result<DataSplits<T>> {
        match self.dataset {
            DatasetKind::Mnist => {
                let (full, test) = load_mnist::<T>(&self.mnist_dir)?;
                let (train, val) = split_validation(&full, self.val_count)?;
                let train = if self.train_subset > 0 {
                    train.head(self.train_subset)
                } else {
                    train
                };
                let test = if self.test_subset > 0 { test.head(self.test_subset) } else { test };
                Ok(DataSplits { train, val, test })
            }
            DatasetKind::Blobs => {
                let all = gen_blobs::<T>(
                    self.blobs_classes,
                    self.blobs_per_class,
                    self.blobs_dim,
                    self.blobs_spread,
                    self.seed,
                )?;
                let n = all.len();
                let (n_train, n_val) = (n * 3 / 5, n / 5);
                let idx: Vec<usize> = (0..n).collect();
                Ok(DataSplits {
                    train: all.select(&idx[..n_train], Split::Train),
                    val: all.select(&idx[n_train..n_train + n_val], Split::Val),
                    test: all.select(&idx[n_train + n_val..], Split::Test),
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DataSplits<T> {
    pub train: Dataset<T>,
    pub val: Dataset<T>,
    pub test: Dataset<T>,
}
