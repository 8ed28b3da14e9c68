//! Finite-difference gradient checks over every layer kind and every loss,
//! on seeded random small instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::losses::{hint_loss, total_loss, DistillConfig, FitNetAdapter, FitnetStage, Strategy};
use crate::nn::{grad_check, relative_error, Architecture, GradientSet, InitScheme, LayerSpec, LossEvaluator, Network, Tensor};
use crate::scalar::Scalar;

use LayerSpec::*;

/// `(step, tolerance)` for the scalar type: `(1e-3, 1e-3)` for `f32`,
/// `(1e-5, 1e-6)` for `f64`.
pub fn default_settings<T: Scalar>() -> (f64, f64) {
    if T::NAME == "f32" {
        (1e-3, 1e-3)
    } else {
        (1e-5, 1e-6)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub name: &'static str,
    pub instance: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub precision: &'static str,
    pub step: f64,
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().fold(0.0, |m, c| m.max(c.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    /// `(case, instances, worst error, probes checked, probes skipped)`.
    pub fn by_case(&self) -> Vec<(&'static str, usize, f64, usize, usize)> {
        let mut out: Vec<(&'static str, usize, f64, usize, usize)> = Vec::new();
        for c in &self.cases {
            match out.iter_mut().find(|r| r.0 == c.name) {
                Some(r) => {
                    r.1 += 1;
                    r.2 = r.2.max(c.max_rel_error);
                    r.3 += c.checked;
                    r.4 += c.skipped_kinks;
                }
                None => out.push((c.name, 1, c.max_rel_error, c.checked, c.skipped_kinks)),
            }
        }
        out
    }
}

/// Total loss of a student on a fixed batch against a fixed teacher trace.
pub struct BatchObjective<T> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
    pub teacher: Option<Network<T>>,
    pub adapter: Option<FitNetAdapter<T>>,
    pub cfg: DistillConfig,
    pub stage: FitnetStage,
}

impl<T: Scalar> BatchObjective<T> {
    fn hint_stage(&self) -> bool {
        self.cfg.strategy == Strategy::Fitnet && self.stage == FitnetStage::Hint
    }

    fn run(&self, net: &Network<T>) -> Result<(crate::nn::ForwardTrace<T>, crate::losses::TotalLoss<T>)> {
        let hint = self.hint_stage();
        let fwd = |n: &Network<T>| {
            if hint {
                n.forward_through(&self.inputs, n.tap_index)
            } else {
                n.forward(&self.inputs)
            }
        };
        let teacher = match &self.teacher {
            Some(t) => Some(fwd(t)?),
            None => None,
        };
        let student = fwd(net)?;
        let loss = total_loss(
            &self.labels,
            &student,
            teacher.as_ref(),
            self.adapter.as_ref(),
            &self.cfg,
            self.stage,
        )?;
        Ok((student, loss))
    }
}

impl<T: Scalar> LossEvaluator<T> for BatchObjective<T> {
    fn loss(&self, net: &Network<T>) -> Result<(T, u64)> {
        let (trace, loss) = self.run(net)?;
        Ok((loss.value, trace.activation_pattern()))
    }

    fn loss_and_grads(&self, net: &Network<T>) -> Result<(T, GradientSet<T>)> {
        let (trace, loss) = self.run(net)?;
        let grads = net.backward(&trace, loss.logit_grad.as_ref(), loss.tapped_grad.as_ref())?;
        Ok((loss.value, grads))
    }
}

fn random_tensor<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-1.0..1.0))).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn uniform(a: f64) -> InitScheme {
    InitScheme::Uniform { low: -a, high: a }
}

struct Case {
    name: &'static str,
    student: Architecture,
    teacher: Option<Architecture>,
    cfg: DistillConfig,
    stage: FitnetStage,
    batch: usize,
}

fn layer_case(name: &'static str, input: Vec<usize>, layers: Vec<LayerSpec>) -> Case {
    let tap = layers.len() - 2;
    Case {
        name,
        student: Architecture::new(input, layers, tap),
        teacher: None,
        cfg: DistillConfig {
            strategy: Strategy::Bp,
            ..DistillConfig::default()
        },
        stage: FitnetStage::Distill,
        batch: 4,
    }
}

fn loss_case(name: &'static str, strategy: Strategy, lambda: f64, gamma: f64, stage: FitnetStage) -> Case {
    let student = Architecture::new(
        vec![6],
        vec![
            Dense { inputs: 6, outputs: 5 },
            Relu,
            Dense { inputs: 5, outputs: 3 },
            Dense { inputs: 3, outputs: 4 },
        ],
        2,
    );
    let teacher = Architecture::new(
        vec![6],
        vec![
            Dense { inputs: 6, outputs: 8 },
            Relu,
            Dense { inputs: 8, outputs: 4 },
        ],
        1,
    );
    Case {
        name,
        student,
        teacher: (strategy != Strategy::Bp).then_some(teacher),
        cfg: DistillConfig {
            strategy,
            lambda,
            gamma,
            k: 3,
            ..DistillConfig::default()
        },
        stage,
        batch: 8,
    }
}

fn cases() -> Vec<Case> {
    vec![
        layer_case("dense", vec![5], vec![Dense { inputs: 5, outputs: 4 }, Dense { inputs: 4, outputs: 3 }]),
        layer_case(
            "relu",
            vec![5],
            vec![Dense { inputs: 5, outputs: 6 }, Relu, Dense { inputs: 6, outputs: 3 }],
        ),
        layer_case(
            "maxout",
            vec![5],
            vec![Dense { inputs: 5, outputs: 8 }, Maxout { pieces: 2 }, Dense { inputs: 4, outputs: 3 }],
        ),
        layer_case(
            "conv2d",
            vec![2, 5, 5],
            vec![
                Conv2d { in_channels: 2, out_channels: 3, kernel: 3, stride: 1 },
                Flatten,
                Dense { inputs: 27, outputs: 3 },
            ],
        ),
        layer_case(
            "conv2d_strided",
            vec![1, 7, 7],
            vec![
                Conv2d { in_channels: 1, out_channels: 2, kernel: 3, stride: 2 },
                Flatten,
                Dense { inputs: 18, outputs: 3 },
            ],
        ),
        layer_case(
            "maxpool2d",
            vec![1, 6, 6],
            vec![
                Conv2d { in_channels: 1, out_channels: 2, kernel: 3, stride: 1 },
                MaxPool2d { size: 2, stride: 2 },
                Flatten,
                Dense { inputs: 8, outputs: 3 },
            ],
        ),
        layer_case(
            "flatten",
            vec![2, 3, 3],
            vec![Flatten, Dense { inputs: 18, outputs: 4 }, Dense { inputs: 4, outputs: 3 }],
        ),
        loss_case("ce", Strategy::Bp, 0.0, 0.0, FitnetStage::Distill),
        loss_case("kd", Strategy::Kd, 2.0, 0.0, FitnetStage::Distill),
        loss_case("hint", Strategy::Fitnet, 2.0, 0.0, FitnetStage::Hint),
        loss_case("lp", Strategy::Lp, 0.0, 1.0, FitnetStage::Distill),
        loss_case("total", Strategy::Lp, 2.0, 1.0, FitnetStage::Distill),
    ]
}

/// Finite-difference check of the adapter's own gradients.
fn check_adapter<T: Scalar>(obj: &BatchObjective<T>, net: &Network<T>, step: f64) -> Result<(f64, usize)> {
    let fs = net.forward_through(&obj.inputs, net.tap_index)?.tapped();
    let teacher = obj.teacher.as_ref().expect("hint case has a teacher");
    let ft = teacher.forward_through(&obj.inputs, teacher.tap_index)?.tapped();
    let base = obj.adapter.clone().expect("hint case has an adapter");
    let grads = hint_loss(&fs, &ft, &base)?;
    let h = T::from_f64_lossy(step);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for which in 0..2 {
        let len = if which == 0 { base.weight.len() } else { base.bias.len() };
        for idx in 0..len {
            let mut probe = base.clone();
            let p = if which == 0 { &mut probe.weight } else { &mut probe.bias };
            let orig = p.data()[idx];
            p.data_mut()[idx] = orig + h;
            let lp = hint_loss(&fs, &ft, &probe)?.value;
            let p = if which == 0 { &mut probe.weight } else { &mut probe.bias };
            p.data_mut()[idx] = orig - h;
            let lm = hint_loss(&fs, &ft, &probe)?.value;
            let numeric = (lp - lm).as_f64() / ((orig + h) - (orig - h)).as_f64();
            let analytic = if which == 0 { &grads.grad_weight } else { &grads.grad_bias }.data()[idx].as_f64();
            worst = worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
    }
    Ok((worst, checked))
}

/// Runs every case on `instances` random instances.
pub fn run_suite<T: Scalar>(instances: usize, seed: u64, step: f64, tolerance: f64) -> Result<SuiteReport> {
    let mut results = Vec::new();
    for (ci, case) in cases().into_iter().enumerate() {
        for inst in 0..instances {
            let s = seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add((ci as u64) << 32 | inst as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let net = Network::<T>::init(&case.student, s, uniform(0.5))?;
            let classes = net.class_count();
            let mut shape = vec![case.batch];
            shape.extend_from_slice(&case.student.input_shape);
            let inputs = random_tensor::<T>(&shape, &mut rng);
            let labels = (0..case.batch).map(|_| rng.random_range(0..classes)).collect();
            let teacher = match &case.teacher {
                Some(a) => Some(Network::<T>::init(a, s ^ 0x7eac, uniform(0.5))?),
                None => None,
            };
            let adapter = match (&teacher, case.cfg.strategy) {
                (Some(t), Strategy::Fitnet) => Some(FitNetAdapter::init(net.tap_dim(), t.tap_dim(), s ^ 0xada9)),
                _ => None,
            };
            let obj = BatchObjective {
                inputs,
                labels,
                teacher,
                adapter,
                cfg: case.cfg,
                stage: case.stage,
            };
            let report = grad_check(&net, &obj, step, tolerance)?;
            let mut result = CaseResult {
                name: case.name,
                instance: inst,
                max_rel_error: report.max_rel_error(),
                checked: report.params.iter().map(|p| p.checked).sum(),
                skipped_kinks: report.params.iter().map(|p| p.skipped_kinks).sum(),
            };
            if obj.adapter.is_some() {
                let (err, n) = check_adapter(&obj, &net, step)?;
                result.max_rel_error = result.max_rel_error.max(err);
                result.checked += n;
            }
            results.push(result);
        }
    }
    Ok(SuiteReport {
        precision: T::NAME,
        step,
        tolerance,
        cases: results,
    })
}
