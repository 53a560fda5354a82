//! Rectified Adam with a cosine-annealed warm-restart learning-rate schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RAdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Cosine annealing with warm restarts, counted in optimizer steps. Each
/// cycle is `mult` times longer than the previous one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineRestarts {
    pub cycle_len: u64,
    pub mult: u64,
    pub cycle_pos: u64,
}

impl CosineRestarts {
    pub fn new(cycle_len: u64, mult: u64) -> Self {
        Self {
            cycle_len: cycle_len.max(1),
            mult: mult.max(1),
            cycle_pos: 0,
        }
    }

    /// Learning-rate multiplier at the current position.
    pub fn factor(&self) -> f64 {
        0.5 * (1.0 + (PI * self.cycle_pos as f64 / self.cycle_len as f64).cos())
    }

    pub fn advance(&mut self) {
        self.cycle_pos += 1;
        if self.cycle_pos >= self.cycle_len {
            self.cycle_pos = 0;
            self.cycle_len *= self.mult;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: RAdamConfig,
    pub first_moment: ParamGrads,
    pub second_moment: ParamGrads,
    pub step: u64,
    pub schedule: CosineRestarts,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet, config: RAdamConfig, schedule: CosineRestarts) -> Self {
        Self {
            config,
            first_moment: ParamGrads::zeros_like(params),
            second_moment: ParamGrads::zeros_like(params),
            step: 0,
            schedule,
        }
    }
}

/// One RAdam update using `lr_base` scaled by the schedule, then advance the
/// schedule.
pub fn optimizer_step(
    params: &mut ParameterSet,
    grads: &ParamGrads,
    opt: &mut OptimizerState,
    lr_base: f64,
) -> Result<()> {
    grads.check_finite(params)?;
    if grads.layers.len() != params.layers.len() {
        return Err(Error::InvalidInput("gradient/parameter layer count mismatch".into()));
    }
    let RAdamConfig { beta1, beta2, eps } = opt.config;
    opt.step += 1;
    let t = opt.step as f64;
    let lr = lr_base * opt.schedule.factor();
    let bias1 = 1.0 - beta1.powf(t);
    let beta2_t = beta2.powf(t);
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t);
    let rect = (rho_t > 5.0).then(|| {
        ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
    });
    let bias2_sqrt = (1.0 - beta2_t).sqrt();

    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bias1;
        match rect {
            Some(r) => *p -= lr * r * m_hat * bias2_sqrt / (v.sqrt() + eps),
            None => *p -= lr * m_hat,
        }
    };

    for (((layer, g), m), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut opt.first_moment.layers)
        .zip(&mut opt.second_moment.layers)
    {
        ndarray::Zip::from(&mut layer.weight)
            .and(&g.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut layer.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    opt.schedule.advance();
    Ok(())
}
