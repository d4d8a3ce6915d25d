use serde::{Deserialize, Serialize};
use scarcegan_autodiff::Array;

use crate::error::{contract, Result};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a named parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One update. Parameters without a gradient entry are left untouched,
    /// moments included.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[(String, Array)]) -> Result<()> {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, g) in grads {
            let (Some(p), Some(m), Some(v)) = (params.get_mut(name), self.m.get_mut(name), self.v.get_mut(name)) else {
                return Err(contract(format!("no parameter `{name}` for optimizer update")));
            };
            if p.shape() != g.shape() {
                return Err(contract(format!("gradient for `{name}` has shape {:?}, parameter {:?}", g.shape(), p.shape())));
            }
            for (((p, m), v), &g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
