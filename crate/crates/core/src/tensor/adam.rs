use serde::{Deserialize, Serialize};

use super::Real;

/// Adam hyperparameters. Defaults follow the TensorFlow/Keras optimizer
/// (`epsilon = 1e-7`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Per-parameter moment estimates for a list of parameter groups.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> AdamState<T> {
    /// Creates zeroed moments for groups of the given sizes.
    pub fn new(config: AdamConfig, group_sizes: &[usize]) -> Self {
        AdamState {
            config,
            m: group_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: group_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update:
    /// `θ ← θ − lr · m̂ / (√v̂ + ε)`, `m̂ = m/(1−β₁ᵗ)`, `v̂ = v/(1−β₂ᵗ)`.
    ///
    /// Panics if the groups do not match the sizes given at construction.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) {
        assert_eq!(params.len(), self.m.len(), "parameter group count");
        assert_eq!(grads.len(), self.m.len(), "gradient group count");
        self.t += 1;
        let c = self.config;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one_m_b1 = T::lit(1.0 - c.beta1);
        let one_m_b2 = T::lit(1.0 - c.beta2);
        let corr1 = T::lit(1.0 - c.beta1.powf(self.t as f64));
        let corr2 = T::lit(1.0 - c.beta2.powf(self.t as f64));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.epsilon);

        for (g_idx, (theta, grad)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[g_idx], &mut self.v[g_idx]);
            assert_eq!(theta.len(), m.len(), "parameter group {g_idx} size");
            assert_eq!(grad.len(), m.len(), "gradient group {g_idx} size");
            for i in 0..m.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + one_m_b1 * g;
                v[i] = b2 * v[i] + one_m_b2 * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
