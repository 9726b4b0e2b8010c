use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_LR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Step decay: `initial * factor` from 1-based epoch `drop_epoch` onwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub drop_epoch: usize,
    pub factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: DEFAULT_LR, drop_epoch: 10, factor: 0.1 }
    }
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self { initial: lr, drop_epoch: usize::MAX, factor: 1.0 }
    }

    /// Learning rate for 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch + 1 >= self.drop_epoch {
            self.initial * self.factor
        } else {
            self.initial
        }
    }
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>, config: AdamConfig) -> Self {
        let first: Vec<Matrix> = params.into_iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { config, second: first.clone(), first, step: 0 }
    }

    /// One bias-corrected Adam update. Rejects non-finite or mis-shaped
    /// gradients before touching any parameter.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} params and {} grads for {} moments",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::DimensionMismatch { op: "adam_step", left: p.shape(), right: g.shape() });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { context: format!("gradient of tensor {i}") });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].as_mut_slice();
            let v = self.second[i].as_mut_slice();
            for (((pv, gv), mv), vv) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0), 0.1);
        assert_eq!(s.lr_at(8), 0.1);
        assert!((s.lr_at(9) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(30) - 0.01).abs() < 1e-15);
        assert_eq!(LrSchedule::constant(0.5).lr_at(1000), 0.5);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = Matrix::from_fn(2, 2, |i, j| (i + j) as f64);
        let before = p.clone();
        let g = Matrix::zeros(2, 2);
        let mut state = AdamState::new([&p], AdamConfig::default());
        state.step(&mut [&mut p], &[&g], 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn scalar_step_closed_form() {
        let mut p = Matrix::new(1, 1, vec![0.7]).unwrap();
        let g = Matrix::new(1, 1, vec![-0.3]).unwrap();
        let mut state = AdamState::new([&p], AdamConfig::default());
        state.step(&mut [&mut p], &[&g], 0.1).unwrap();
        let expected = 0.7 - 0.1 * (-0.3) / (0.3 + 1e-8);
        assert!((p.get(0, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = Matrix::zeros(1, 2);
        let mut q = Matrix::zeros(1, 1);
        let good = Matrix::new(1, 2, vec![1.0, 1.0]).unwrap();
        let mut bad = Matrix::zeros(1, 1);
        bad.set(0, 0, f64::NAN);
        let mut state = AdamState::new([&p, &q], AdamConfig::default());
        let err = state.step(&mut [&mut p, &mut q], &[&good, &bad], 0.1).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Numerical);
        assert_eq!(p, Matrix::zeros(1, 2));
        assert_eq!(state.step, 0);
    }
}
