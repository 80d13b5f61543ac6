//! Adam / AMSGrad and step-decay learning-rate schedules.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(default)]
    pub amsgrad: bool,
    /// L2 penalty added to the gradient.
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            amsgrad: false,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Moment estimates for a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_max: Option<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            v_max: config.amsgrad.then(|| vec![0.0; len]),
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Advances the moments and returns the update to add to `params`.
    /// Coordinates with `active[k] == false` are left untouched and get a
    /// zero update.
    pub fn deltas(&mut self, params: &[f64], grads: &[f64], active: Option<&[bool]>, lr: f64) -> Result<Vec<f64>> {
        assert_eq!(params.len(), self.len(), "parameter length");
        assert_eq!(grads.len(), self.len(), "gradient length");
        if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Config(format!("non-finite gradient at coordinate {k}")));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let mut out = vec![0.0; self.len()];
        for k in 0..self.len() {
            if active.is_some_and(|a| !a[k]) {
                continue;
            }
            let g = grads[k] + c.weight_decay * params[k];
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g;
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g;
            let second = match self.v_max.as_mut() {
                Some(vm) => {
                    vm[k] = vm[k].max(self.v[k]);
                    vm[k]
                }
                None => self.v[k],
            };
            let m_hat = self.m[k] / bc1;
            out[k] = -lr * m_hat / ((second / bc2).sqrt() + c.eps);
        }
        Ok(out)
    }

    /// In-place Adam step.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], active: Option<&[bool]>, lr: f64) -> Result<()> {
        let d = self.deltas(params, grads, active, lr)?;
        for (p, d) in params.iter_mut().zip(d) {
            *p += d;
        }
        Ok(())
    }

    /// Forgets the history of one coordinate (used when a synapse is rewired).
    pub fn reset_coordinate(&mut self, k: usize) {
        self.m[k] = 0.0;
        self.v[k] = 0.0;
        if let Some(vm) = self.v_max.as_mut() {
            vm[k] = 0.0;
        }
    }
}

/// `lr = initial * factor ^ floor(iteration / interval)`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_factor: f64,
    pub decay_interval: u64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            decay_factor: 1.0,
            decay_interval: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial >= 0.0 && self.decay_factor > 0.0 && self.decay_factor <= 1.0 && self.decay_interval >= 1 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid learning-rate schedule {self:?}")))
        }
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        self.initial * self.decay_factor.powi((iteration / self.decay_interval) as i32)
    }
}
