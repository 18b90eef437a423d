use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { base_lr: 1e-3, momentum: 0.9, weight_decay: 1e-4, batch_size: 128 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
///
/// ```text
/// v ← μ·v + (g + λ·w)
/// w ← w − η·v
/// ```
///
/// Entries whose trainable mask is false are never touched.
#[derive(Clone, Debug)]
pub struct Sgd {
    config: OptimizerConfig,
    velocity: Option<ParamVector>,
}

impl Sgd {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, velocity: None })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step(&mut self, params: &mut ParamVector, grads: &ParamVector, lr: f64) -> Result<()> {
        params.check_layout(grads, "sgd_step")?;
        if !(lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
        }
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        let OptimizerConfig { momentum, weight_decay, .. } = self.config;
        for idx in 0..params.len() {
            if !params.is_trainable(idx) {
                continue;
            }
            let g = grads.tensor(idx).data();
            let v = velocity.tensor_mut(idx).data_mut();
            let w = params.tensor_mut(idx).data_mut();
            for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = momentum * *vi + gi + weight_decay * *wi;
                *wi -= lr * *vi;
            }
        }
        Ok(())
    }
}

/// Functional single step with fresh optimizer state.
pub fn sgd_step(
    params: &ParamVector,
    grads: &ParamVector,
    lr: f64,
    config: &OptimizerConfig,
) -> Result<ParamVector> {
    let mut out = params.clone();
    Sgd::new(*config)?.step(&mut out, grads, lr)?;
    Ok(out)
}
