//! FitNet-style hint loss through a fully-connected adapter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::{gemm, Op, Scalar};

/// Fully-connected map from student guided features (`d_S`) to teacher hint
/// space (`d_T`): `r(f) = W f + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitNetAdapter<T> {
    /// `[d_T × d_S]`
    pub weight: Tensor<T>,
    /// `[d_T]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> FitNetAdapter<T> {
    /// He-uniform weights, zero bias.
    pub fn init(d_student: usize, d_teacher: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (6.0 / d_student.max(1) as f64).sqrt();
        let w = (0..d_teacher * d_student)
            .map(|_| T::from_f64_lossy(a * (2.0 * rng.random::<f64>() - 1.0)))
            .collect();
        FitNetAdapter {
            weight: Tensor::new(vec![d_teacher, d_student], w).unwrap(),
            bias: Tensor::zeros(&[d_teacher]),
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut weight = Tensor::zeros(&[d, d]);
        for i in 0..d {
            weight.data_mut()[i * d + i] = T::one();
        }
        FitNetAdapter {
            weight,
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn zeros(d_student: usize, d_teacher: usize) -> Self {
        FitNetAdapter {
            weight: Tensor::zeros(&[d_teacher, d_student]),
            bias: Tensor::zeros(&[d_teacher]),
        }
    }

    pub fn d_student(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_teacher(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `d_S·d_T + d_T`
    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `[m × d_S] → [m × d_T]`
    pub fn forward(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, ds, dt) = (features.rows(), self.d_student(), self.d_teacher());
        if features.row_len() != ds {
            return Err(Error::shape("adapter input", &[m, ds], features.shape()));
        }
        let mut out = Vec::with_capacity(m * dt);
        for _ in 0..m {
            out.extend_from_slice(self.bias.data());
        }
        gemm(m, ds, dt, T::one(), features.data(), Op::N, self.weight.data(), Op::T, T::one(), &mut out);
        Tensor::new(vec![m, dt], out)
    }
}

#[derive(Debug, Clone)]
pub struct HintLoss<T> {
    pub value: T,
    /// `∂L/∂f_S`, `[m × d_S]`
    pub grad_features: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

/// `½ · mean_i ‖r(f_S^i) − f_T^i‖²` with analytic gradients.
pub fn hint_loss<T: Scalar>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    adapter: &FitNetAdapter<T>,
) -> Result<HintLoss<T>> {
    let (m, ds, dt) = (student.rows(), adapter.d_student(), adapter.d_teacher());
    if teacher.rows() != m || teacher.row_len() != dt {
        return Err(Error::shape("hint_loss teacher features", &[m, dt], teacher.shape()));
    }
    let mut diff = adapter.forward(student)?;
    let inv_m = T::one() / T::from_usize(m.max(1)).unwrap();
    let mut value = 0.0f64;
    for (d, &t) in diff.data_mut().iter_mut().zip(teacher.data()) {
        *d -= t;
        value += (*d * *d).as_f64();
        *d *= inv_m;
    }
    let mut gw = vec![T::zero(); dt * ds];
    gemm(dt, m, ds, T::one(), diff.data(), Op::T, student.data(), Op::N, T::zero(), &mut gw);
    let mut gb = vec![T::zero(); dt];
    for i in 0..m {
        for (acc, &v) in gb.iter_mut().zip(diff.row(i)) {
            *acc += v;
        }
    }
    let mut gf = vec![T::zero(); m * ds];
    gemm(m, dt, ds, T::one(), diff.data(), Op::N, adapter.weight.data(), Op::N, T::zero(), &mut gf);
    Ok(HintLoss {
        value: T::from_f64_lossy(0.5 * value / m.max(1) as f64),
        grad_features: Tensor::new(vec![m, ds], gf)?,
        grad_weight: Tensor::new(vec![dt, ds], gw)?,
        grad_bias: Tensor::new(vec![dt], gb)?,
    })
}
