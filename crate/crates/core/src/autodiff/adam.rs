use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter in store order;
/// frozen parameters are skipped but their gradients are still cleared.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step_count: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| -> Vec<Tensor> {
            s.iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Self {
            config,
            first_moment: zeros(store),
            second_moment: zeros(store),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    ///
    /// Aborts without touching any parameter if a trainable gradient is
    /// non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.first_moment.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "optimizer tracks {} parameters, store has {}",
                    self.first_moment.len(),
                    store.len()
                ),
            ));
        }
        if let Some(bad) = store.iter().find(|p| p.trainable && !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter '{}'",
                bad.name
            )));
        }
        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in store
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            if p.trainable {
                let grads = p.grad.values();
                let values = p.value.values_mut();
                let ms = m.values_mut();
                let vs = v.values_mut();
                for i in 0..grads.len() {
                    let g = grads[i];
                    ms[i] = beta1 * ms[i] + (1.0 - beta1) * g;
                    vs[i] = beta2 * vs[i] + (1.0 - beta2) * g * g;
                    let m_hat = ms[i] / bc1;
                    let v_hat = vs[i] / bc2;
                    values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }
}
