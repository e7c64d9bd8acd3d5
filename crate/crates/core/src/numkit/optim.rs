use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

use super::params::ParamSet;
use super::tensor::DenseTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<DenseTensor>,
    second: Vec<DenseTensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        Self {
            config,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[DenseTensor]) -> Result<()> {
        ensure!(self.config.lr > 0.0, "learning rate must be positive");
        check_shapes(params, grads)?;
        ensure!(
            self.first.len() == params.len(),
            "optimizer state tracks {} tensors, params have {}",
            self.first.len(),
            params.len()
        );
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(i).data_mut();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Moment tensors and step counter, for checkpointing.
    pub fn state(&self) -> (&[DenseTensor], &[DenseTensor], u64) {
        (&self.first, &self.second, self.step)
    }

    pub fn from_state(
        config: AdamConfig,
        first: Vec<DenseTensor>,
        second: Vec<DenseTensor>,
        step: u64,
    ) -> Result<Self> {
        ensure!(
            first.len() == second.len() && first.iter().zip(&second).all(|(a, b)| a.same_shape(b)),
            "Adam moment tensors disagree in shape"
        );
        Ok(Self {
            config,
            step,
            first,
            second,
        })
    }
}

/// Plain gradient descent.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    step: u64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[DenseTensor]) -> Result<()> {
        ensure!(self.lr > 0.0, "learning rate must be positive");
        check_shapes(params, grads)?;
        self.step += 1;
        for (i, g) in grads.iter().enumerate() {
            for (p, gv) in params.get_mut(i).data_mut().iter_mut().zip(g.data()) {
                *p -= self.lr * gv;
            }
        }
        Ok(())
    }
}

fn check_shapes(params: &ParamSet, grads: &[DenseTensor]) -> Result<()> {
    ensure!(
        params.len() == grads.len(),
        "{} gradients for {} parameters",
        grads.len(),
        params.len()
    );
    for ((name, p), g) in params.iter().zip(grads) {
        ensure!(
            p.same_shape(g),
            "gradient shape {:?} does not match parameter {name} {:?}",
            g.shape(),
            p.shape()
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", DenseTensor::row(vec![value]));
        p
    }

    #[test]
    fn sgd_definition() {
        let mut p = one(1.0);
        let mut opt = Sgd::new(0.1);
        opt.step(&mut p, &[DenseTensor::row(vec![1.0])]).unwrap();
        assert!((p.get(0).item() - 0.9).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one(2.5);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[DenseTensor::row(vec![0.0])]).unwrap();
        assert_eq!(p.get(0).item(), 2.5);
        let mut sgd = Sgd::new(0.3);
        sgd.step(&mut p, &[DenseTensor::row(vec![0.0])]).unwrap();
        assert_eq!(p.get(0).item(), 2.5);
    }

    #[test]
    fn first_adam_step_is_about_lr() {
        // m̂ = g, v̂ = g², so Δ = lr·g/(|g| + ε)
        for g in [1e-3, 0.7, -42.0] {
            let mut p = one(0.0);
            let mut adam = Adam::new(AdamConfig::default(), &p);
            adam.step(&mut p, &[DenseTensor::row(vec![g])]).unwrap();
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!((p.get(0).item() - expected).abs() < 1e-15);
            assert!((p.get(0).item().abs() - 1e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = one(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        assert!(adam.step(&mut p, &[DenseTensor::row(vec![0.0, 1.0])]).is_err());
        assert_eq!(adam.step_count(), 0);
    }
}
