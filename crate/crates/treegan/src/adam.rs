//! Adam with bias correction.

use crate::nn::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam hyperparameters. Defaults follow the training setup used throughout
/// this crate: alpha 1e-4, beta1 0, beta2 0.99, eps 1e-8.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 1e-4,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// First/second-moment accumulators for one [`ParamSet`], by position.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let m = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        let v = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        AdamState {
            config,
            m,
            v,
            step: 0,
        }
    }

    /// One update from the gradients currently held by `params`. Gradients
    /// are left untouched; the caller resets them.
    pub fn step(&mut self, params: &mut ParamSet<T>) {
        self.step += 1;
        let t = self.step as i32;
        let a = T::of_f64(self.config.alpha);
        let b1 = T::of_f64(self.config.beta1);
        let b2 = T::of_f64(self.config.beta2);
        let eps = T::of_f64(self.config.eps);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);

        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = p.grad.data();
            let w = p.value.data_mut();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] = w[j] - a * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
