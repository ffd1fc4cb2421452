//! First-order parameter updates.

use serde::{Deserialize, Serialize};

use super::vector::all_finite;
use crate::error::{Error, Result};

/// `params -= lr * direction`
pub fn sgd_step(params: &mut [f64], direction: &[f64], lr: f64) -> Result<()> {
    check(params, direction)?;
    for (p, d) in params.iter_mut().zip(direction) {
        *p -= lr * d;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// First/second moment estimates for one parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Bias-corrected Adam update of `params` along `direction`.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], direction: &[f64], lr: f64) -> Result<()> {
    check(params, direction)?;
    if state.m.len() != params.len() {
        return Err(Error::config("adam state length does not match parameters"));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = direction[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

fn check(params: &[f64], direction: &[f64]) -> Result<()> {
    if params.len() != direction.len() {
        return Err(Error::config(format!(
            "direction length {} != parameter length {}",
            direction.len(),
            params.len()
        )));
    }
    if !all_finite(direction) {
        return Err(Error::NonFinite {
            task: None,
            what: "update direction".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Optimizer bound to one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(len, AdamConfig::default())),
        }
    }

    pub fn step(&mut self, params: &mut [f64], direction: &[f64], lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_step(params, direction, lr),
            Optimizer::Adam(state) => adam_step(state, params, direction, lr),
        }
    }
}
