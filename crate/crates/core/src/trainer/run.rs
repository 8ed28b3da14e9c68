//! Teacher training and the student training loop.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::losses::{total_loss, DistillConfig, FitNetAdapter, FitnetStage, Strategy};
use crate::nn::{InitScheme, Network, Optimizer, OptimizerConfig, Tensor};
use crate::scalar::Scalar;
use crate::trainer::eval::evaluate;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub init: InitScheme,
    pub distill: DistillConfig,
    /// Validate every this many epochs (and always after the last one).
    pub eval_every: usize,
    /// Share of the epoch budget spent on FitNet hint training.
    pub fitnet_hint_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            optimizer: OptimizerConfig::rmsprop(0.0005, 0.9),
            seed: 0,
            init: InitScheme::Uniform { low: -0.005, high: 0.005 },
            distill: DistillConfig::default(),
            eval_every: 1,
            fitnet_hint_fraction: 1.0 / 3.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::arg("epochs", "must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::arg("eval_every", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.fitnet_hint_fraction) {
            return Err(Error::arg("fitnet_hint_fraction", "must lie in [0, 1)"));
        }
        self.optimizer.validate()?;
        self.distill.validate()?;
        if self.distill.strategy == Strategy::Lp && self.batch_size < self.distill.k + 1 {
            return Err(Error::arg(
                "m",
                format!(
                    "lp needs batch size >= k+1 = {}, got {}",
                    self.distill.k + 1,
                    self.batch_size
                ),
            ));
        }
        if self.batch_size < 1 {
            return Err(Error::arg("m", "must be >= 1"));
        }
        Ok(())
    }

    /// Epochs of FitNet hint training (zero for other strategies).
    pub fn hint_epochs(&self) -> usize {
        if self.distill.strategy == Strategy::Fitnet {
            (self.epochs as f64 * self.fitnet_hint_fraction).round() as usize
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: String,
    /// Mean of the per-step total losses.
    pub train_loss: f64,
    pub ce: f64,
    pub kd: f64,
    pub lp: f64,
    pub hint: f64,
    pub val_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub role: String,
    pub strategy: String,
    pub epochs: Vec<EpochRecord>,
    /// Every optimizer step's total loss, in order.
    pub step_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub student_params: usize,
    /// Trainable parameters outside the network (the FitNet adapter).
    pub adapter_params: usize,
}

impl RunRecord {
    /// One JSON object per epoch followed by a summary object.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.epochs {
            serde_json::to_writer(&mut f, e)?;
            f.write_all(b"\n")?;
        }
        let summary = serde_json::json!({
            "summary": true,
            "role": self.role,
            "strategy": self.strategy,
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
            "test_accuracy": self.test_accuracy,
            "student_params": self.student_params,
            "adapter_params": self.adapter_params,
            "step_losses": self.step_losses,
        });
        serde_json::to_writer(&mut f, &summary)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    /// Loss values only (timings excluded), for determinism comparisons.
    pub fn loss_sequence(&self) -> Vec<f64> {
        let mut v = self.step_losses.clone();
        for e in &self.epochs {
            v.extend([e.train_loss, e.ce, e.kd, e.lp, e.hint]);
        }
        v
    }
}

/// Network being trained together with its optimizer state and, for FitNet,
/// the adapter.
#[derive(Debug, Clone)]
pub struct Trainee<T> {
    pub net: Network<T>,
    pub optimizer: Optimizer<T>,
    pub adapter: Option<(FitNetAdapter<T>, Optimizer<T>)>,
}

impl<T: Scalar> Trainee<T> {
    pub fn new(net: Network<T>, optimizer: OptimizerConfig) -> Result<Self> {
        Ok(Trainee {
            net,
            optimizer: Optimizer::new(optimizer)?,
            adapter: None,
        })
    }

    pub fn with_adapter(mut self, adapter: FitNetAdapter<T>, optimizer: OptimizerConfig) -> Result<Self> {
        self.adapter = Some((adapter, Optimizer::new(optimizer)?));
        Ok(self)
    }
}

/// Per-term losses of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub ce: f64,
    pub kd: f64,
    pub lp: f64,
    pub hint: f64,
}

/// One iteration: teacher forward, student forward, objective, backward with
/// the tap gradient injected, optimizer update. The teacher is not modified.
pub fn student_step<T: Scalar>(
    trainee: &mut Trainee<T>,
    teacher: Option<&Network<T>>,
    inputs: &Tensor<T>,
    labels: &[usize],
    cfg: &DistillConfig,
    stage: FitnetStage,
) -> Result<StepLosses> {
    let m = inputs.rows();
    if cfg.strategy == Strategy::Lp && m < cfg.k + 1 {
        return Err(Error::arg(
            "m",
            format!("batch of {m} is smaller than k+1 = {}", cfg.k + 1),
        ));
    }
    let hint_stage = cfg.strategy == Strategy::Fitnet && stage == FitnetStage::Hint;
    let teacher_trace = match teacher {
        Some(t) if cfg.strategy.uses_teacher() => Some(if hint_stage {
            t.forward_through(inputs, t.tap_index)?
        } else {
            t.forward(inputs)?
        }),
        _ => None,
    };
    let student_trace = if hint_stage {
        trainee.net.forward_through(inputs, trainee.net.tap_index)?
    } else {
        trainee.net.forward(inputs)?
    };
    let adapter = trainee.adapter.as_ref().map(|(a, _)| a);
    let loss = total_loss(labels, &student_trace, teacher_trace.as_ref(), adapter, cfg, stage)?;
    let grads = trainee
        .net
        .backward(&student_trace, loss.logit_grad.as_ref(), loss.tapped_grad.as_ref())?;
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            context: "student gradient".into(),
            value: f64::NAN,
        });
    }
    trainee.optimizer.step(&mut trainee.net, &grads)?;
    if let (Some((gw, gb)), Some((adapter, opt))) = (loss.adapter_grads.as_ref(), trainee.adapter.as_mut()) {
        opt.step_params(vec![&mut adapter.weight, &mut adapter.bias], vec![gw, gb])?;
    }
    Ok(StepLosses {
        total: loss.value.as_f64(),
        ce: loss.ce.as_f64(),
        kd: loss.kd.as_f64(),
        lp: loss.lp.as_f64(),
        hint: loss.hint.as_f64(),
    })
}

/// Final network (best validation epoch) plus its record.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub network: Network<T>,
    pub adapter: Option<FitNetAdapter<T>>,
    pub record: RunRecord,
}

fn run_loop<T: Scalar>(
    mut trainee: Trainee<T>,
    teacher: Option<&Network<T>>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &TrainConfig,
    role: &str,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if trainee.net.class_count() != train.classes {
        return Err(Error::arg(
            "classes",
            format!(
                "network has {} outputs but the dataset has {} classes",
                trainee.net.class_count(),
                train.classes
            ),
        ));
    }
    let plan = BatchPlan {
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        drop_last: true,
    };
    let hint_epochs = cfg.hint_epochs();
    let mut record = RunRecord {
        role: role.to_string(),
        strategy: cfg.distill.strategy.to_string(),
        epochs: Vec::with_capacity(cfg.epochs),
        step_losses: Vec::new(),
        best_epoch: None,
        best_val_accuracy: None,
        test_accuracy: None,
        student_params: trainee.net.param_count(),
        adapter_params: trainee.adapter.as_ref().map_or(0, |(a, _)| a.param_count()),
    };
    let mut best: Option<(f64, Network<T>)> = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let stage = if epoch < hint_epochs {
            FitnetStage::Hint
        } else {
            FitnetStage::Distill
        };
        let batches = plan.batches(train.len(), epoch)?;
        let mut sums = [0.0f64; 5];
        for idx in &batches {
            let (x, y) = train.batch(idx);
            let s = student_step(&mut trainee, teacher, &x, &y, &cfg.distill, stage).map_err(|e| match e {
                Error::NonFinite { context, value } => Error::Diverged {
                    epoch,
                    detail: format!("{context} = {value}"),
                },
                other => other,
            })?;
            if !s.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("loss {}", s.total),
                });
            }
            record.step_losses.push(s.total);
            for (acc, v) in sums.iter_mut().zip([s.total, s.ce, s.kd, s.lp, s.hint]) {
                *acc += v;
            }
        }
        let n = batches.len().max(1) as f64;
        let in_hint = stage == FitnetStage::Hint && cfg.distill.strategy == Strategy::Fitnet;
        let val_accuracy = if !in_hint && !val.is_empty() && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
            Some(evaluate(&trainee.net, val)?.accuracy)
        } else {
            None
        };
        if let Some(acc) = val_accuracy {
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, trainee.net.clone()));
                record.best_epoch = Some(epoch);
                record.best_val_accuracy = Some(acc);
            }
        }
        record.epochs.push(EpochRecord {
            epoch,
            stage: if in_hint { "hint" } else { "main" }.into(),
            train_loss: sums[0] / n,
            ce: sums[1] / n,
            kd: sums[2] / n,
            lp: sums[3] / n,
            hint: sums[4] / n,
            val_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let adapter = trainee.adapter.map(|(a, _)| a);
    let network = match best {
        Some((_, net)) => net,
        None => trainee.net,
    };
    Ok(TrainOutcome {
        network,
        adapter,
        record,
    })
}

/// Cross-entropy training of a teacher; keeps the best-validation network.
pub fn train_teacher<T: Scalar>(
    net: Network<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let mut cfg = cfg.clone();
    cfg.distill.strategy = Strategy::Bp;
    let trainee = Trainee::new(net, cfg.optimizer)?;
    run_loop(trainee, None, train, val, &cfg, "teacher")
}

/// Trains a student against a frozen teacher under `cfg.distill.strategy`.
/// FitNet first trains the adapter and the student up to its tap layer on
/// the hint loss, then switches to soft-target distillation.
pub fn train_student<T: Scalar>(
    student: Network<T>,
    teacher: &Network<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if teacher.class_count() != train.classes {
        return Err(Error::arg("teacher", "teacher class count does not match dataset"));
    }
    let mut trainee = Trainee::new(student, cfg.optimizer)?;
    if cfg.distill.strategy == Strategy::Fitnet {
        let adapter = FitNetAdapter::init(trainee.net.tap_dim(), teacher.tap_dim(), cfg.seed ^ 0xada9);
        trainee = trainee.with_adapter(adapter, cfg.optimizer)?;
    }
    run_loop(trainee, Some(teacher), train, val, cfg, "student")
}

/// Builds a freshly initialized network from the config's seed and scheme.
pub fn init_network<T: Scalar>(arch: &crate::nn::Architecture, cfg: &TrainConfig) -> Result<Network<T>> {
    Network::init(arch, cfg.seed, cfg.init)
}
