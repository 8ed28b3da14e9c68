use crate::error::{Error, Result};
use crate::nn::network::{GradientSet, Network};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    /// Plain SGD with optional heavy-ball momentum.
    Sgd { momentum: f64 },
    /// RMSProp: `r ← ρ·r + (1−ρ)·g²`, `θ ← θ − η·g / (√r + ε)`.
    RmsProp { decay: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub rule: UpdateRule,
    pub learning_rate: f64,
    /// L2 coefficient added to the gradient as `wd·θ`.
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            rule: UpdateRule::Sgd { momentum: 0.0 },
            learning_rate,
            weight_decay: 0.0,
        }
    }

    pub fn rmsprop(learning_rate: f64, decay: f64) -> Self {
        OptimizerConfig {
            rule: UpdateRule::RmsProp { decay, eps: 1e-8 },
            learning_rate,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::arg("lr", format!("must be > 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::arg("weight_decay", "must be >= 0"));
        }
        match self.rule {
            UpdateRule::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                Err(Error::arg("momentum", "must lie in [0, 1)"))
            }
            UpdateRule::RmsProp { decay, eps } if !(0.0..1.0).contains(&decay) || !(eps > 0.0) => {
                Err(Error::arg("rho", "decay must lie in [0, 1) and eps > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Optimizer with per-parameter accumulators (momentum buffer for SGD,
/// squared-gradient average for RMSProp).
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    accum: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            accum: Vec::new(),
        })
    }

    pub fn accumulators(&self) -> &[Tensor<T>] {
        &self.accum
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &GradientSet<T>) -> Result<()> {
        self.step_params(net.params_mut().collect(), grads.iter().collect())
    }

    /// Applies one update to an arbitrary parameter list (used for adapters).
    pub fn step_params(&mut self, params: Vec<&mut Tensor<T>>, grads: Vec<&Tensor<T>>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer params/grads", &[params.len()], &[grads.len()]));
        }
        if self.accum.is_empty() {
            self.accum = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        if self.accum.len() != params.len() {
            return Err(Error::shape("optimizer state", &[self.accum.len()], &[params.len()]));
        }
        let lr = T::from_f64_lossy(self.config.learning_rate);
        let wd = T::from_f64_lossy(self.config.weight_decay);
        for ((p, g), acc) in params.into_iter().zip(grads).zip(self.accum.iter_mut()) {
            if p.shape() != g.shape() || acc.shape() != p.shape() {
                return Err(Error::shape("optimizer step", p.shape(), g.shape()));
            }
            let pd = p.data_mut();
            let ad = acc.data_mut();
            match self.config.rule {
                UpdateRule::Sgd { momentum } => {
                    let mu = T::from_f64_lossy(momentum);
                    for ((w, &gv), a) in pd.iter_mut().zip(g.data()).zip(ad.iter_mut()) {
                        let gv = gv + wd * *w;
                        *a = mu * *a + gv;
                        *w -= lr * *a;
                    }
                }
                UpdateRule::RmsProp { decay, eps } => {
                    let rho = T::from_f64_lossy(decay);
                    let one_minus = T::one() - rho;
                    let eps = T::from_f64_lossy(eps);
                    for ((w, &gv), r) in pd.iter_mut().zip(g.data()).zip(ad.iter_mut()) {
                        let gv = gv + wd * *w;
                        *r = rho * *r + one_minus * gv * gv;
                        *w -= lr * gv / (r.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_f64(&[1], &[v]).unwrap()
    }

    #[test]
    fn sgd_single_step() {
        let mut opt = Optimizer::<f64>::new(OptimizerConfig::sgd(0.1)).unwrap();
        let mut p = scalar(1.0);
        opt.step_params(vec![&mut p], vec![&scalar(0.5)]).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for cfg in [OptimizerConfig::sgd(0.1), OptimizerConfig::rmsprop(0.01, 0.9)] {
            let mut opt = Optimizer::<f64>::new(cfg).unwrap();
            let mut p = scalar(0.7);
            opt.step_params(vec![&mut p], vec![&scalar(0.0)]).unwrap();
            assert_eq!(p.data()[0], 0.7);
            assert_eq!(opt.accumulators()[0].data()[0], 0.0);
        }
    }

    #[test]
    fn rmsprop_first_step_matches_formula() {
        let mut opt = Optimizer::<f64>::new(OptimizerConfig::rmsprop(0.0005, 0.9)).unwrap();
        let mut p = scalar(1.0);
        opt.step_params(vec![&mut p], vec![&scalar(1.0)]).unwrap();
        // r = 0.1, step = 0.0005 / (sqrt(0.1) + 1e-8)
        let expected = 1.0 - 0.0005 / (0.1f64.sqrt() + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!((opt.accumulators()[0].data()[0] - 0.1).abs() < 1e-15);
        assert!(p.data()[0] < 1.0);
    }

    #[test]
    fn weight_decay_adds_l2_term() {
        let mut cfg = OptimizerConfig::sgd(0.1);
        cfg.weight_decay = 0.5;
        let mut opt = Optimizer::<f64>::new(cfg).unwrap();
        let mut p = scalar(2.0);
        opt.step_params(vec![&mut p], vec![&scalar(0.0)]).unwrap();
        assert!((p.data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Optimizer::<f32>::new(OptimizerConfig::sgd(0.0)).is_err());
        assert!(Optimizer::<f32>::new(OptimizerConfig::rmsprop(0.1, 1.0)).is_err());
    }
}
