use std::collections::HashMap;

use super::params::ParamSet;
use super::tape::GradMap;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Adam with bias correction. First and second moments are kept per
/// parameter name across calls.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            moments: HashMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// One update at step index `t` (1-based). Frozen tensors are skipped
    /// and never written.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradMap, t: u64) -> Result<()> {
        if t == 0 {
            return Err(Error::contract("adam step index starts at 1"));
        }
        // Validate first so a failed call leaves every tensor untouched.
        for e in params.iter().filter(|e| e.trainable) {
            match grads.get(&e.name) {
                Some(g) if g.dims() == e.tensor.dims() => {}
                Some(g) => {
                    return Err(Error::contract(format!(
                        "gradient for `{}` has shape {:?}, parameter has {:?}",
                        e.name,
                        g.dims(),
                        e.tensor.dims()
                    )))
                }
                None => {
                    return Err(Error::contract(format!(
                        "missing gradient for trainable parameter `{}`",
                        e.name
                    )))
                }
            }
        }

        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(t as i32);
        let c2 = 1.0 - beta2.powi(t as i32);
        for e in params.iter_mut().filter(|e| e.trainable) {
            let g = grads.get(&e.name).expect("validated above");
            let n = e.tensor.len();
            let (m, v) = self
                .moments
                .entry(e.name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for (((p, gi), mi), vi) in e
                .tensor
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
