//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::layers::{LayerParams, Param};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
        }
    }
}

impl AdamState {
    pub fn with_lr(lr: f64) -> Result<Self> {
        let state = Self {
            lr,
            ..Self::default()
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if self.lr.is_nan() || self.lr <= 0.0 || !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(Error::InvalidConfig(alloc::format!(
                "adam lr={} beta1={} beta2={}",
                self.lr,
                self.beta1,
                self.beta2
            )));
        }
        Ok(())
    }

    /// One update over every parameter, then clears their gradients.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        for p in params {
            let value = p.value.data_mut();
            let grad = p.grad.data_mut();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.epsilon);
                grad[i] = 0.0;
            }
        }
    }
}

/// Applies one Adam step to whole layers.
pub fn adam_step<'a>(layers: impl IntoIterator<Item = &'a mut LayerParams>, state: &mut AdamState) {
    state.step(
        layers
            .into_iter()
            .flat_map(|l| [&mut l.weights, &mut l.bias]),
    );
}
