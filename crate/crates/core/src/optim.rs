//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::params::{Moments, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Default::default()
        }
    }

    /// Updates every parameter in `store`, bumps the shared step count and
    /// clears the gradients.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        let (entries, moments, step) = store.parts_mut();
        if let Some((name, _)) = entries.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::MissingGrad(name.clone()));
        }
        *step += 1;
        let t = *step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, param) in entries.iter_mut() {
            let n = param.numel();
            let state = moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let grad = param.grad().expect("checked above").to_vec();
            for (i, (theta, g)) in param.data_mut().iter_mut().zip(&grad).enumerate() {
                state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
                state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            param.clear_grad();
        }
        Ok(())
    }
}

/// Free-function form of [`Adam::step`].
pub fn adam_step(store: &mut ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
    Adam {
        lr,
        beta1,
        beta2,
        eps,
    }
    .step(store)
}
