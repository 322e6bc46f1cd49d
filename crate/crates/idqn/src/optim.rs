//! Bias-corrected Adam.

use crate::autodiff::Parameter;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Classic L2 weight decay, added to the gradient before the moment
    /// updates. Zero by default.
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            lr: 0.00025,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::config("adam learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if self.eps <= 0.0 {
            return Err(Error::config("adam epsilon must be positive"));
        }
        if self.decay < 0.0 {
            return Err(Error::config("adam decay must be non-negative"));
        }
        Ok(())
    }
}

/// Optimizer state: step counter plus first/second moments aligned with the
/// parameter list it was built from.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Parameter]) -> Result<Adam> {
        config.validate()?;
        Ok(Adam {
            config,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        })
    }

    /// Restores saved state (checkpoint load). Moment shapes must line up
    /// with the parameter list.
    pub fn from_state(
        config: AdamConfig,
        params: &[Parameter],
        t: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    ) -> Result<Adam> {
        config.validate()?;
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::checkpoint(format!(
                "optimizer state covers {} parameters, model has {}",
                m.len().min(v.len()),
                params.len()
            )));
        }
        for ((p, mi), vi) in params.iter().zip(&m).zip(&v) {
            if mi.len() != p.tensor.numel() || vi.len() != p.tensor.numel() {
                return Err(Error::checkpoint(format!(
                    "optimizer moments for {} have the wrong length",
                    p.name
                )));
            }
        }
        Ok(Adam { config, t, m, v })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// One update over every parameter's accumulated gradient.
    pub fn step(&mut self, params: &mut [Parameter]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer was built for {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.tensor.grad().ok_or_else(|| {
                Error::contract(format!("parameter {} has no gradient buffer", p.name))
            })?;
            let grad: Vec<f64> = if c.decay > 0.0 {
                grad.iter()
                    .zip(p.tensor.data())
                    .map(|(g, x)| g + c.decay * x)
                    .collect()
            } else {
                grad.to_vec()
            };
            let data = p.tensor.data_mut();
            for (j, &g) in grad.iter().enumerate() {
                self.m[i][j] = c.beta1 * self.m[i][j] + (1.0 - c.beta1) * g;
                self.v[i][j] = c.beta2 * self.v[i][j] + (1.0 - c.beta2) * g * g;
                let mhat = self.m[i][j] / bc1;
                let vhat = self.v[i][j] / bc2;
                data[j] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
