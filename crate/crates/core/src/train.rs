//! Single-worker training loop shared by every experiment variant.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::TrainableModel;
use crate::optimize::{LrPlan, OptimizerConfig, Sgd, SwaState, WarmupScalingPolicy};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupMode {
    /// Warm up only when training on more than one worker.
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    /// Trailing epochs averaged by SWA; 0 disables it.
    pub swa_epochs: usize,
    pub eta_min_ratio: f64,
    pub warmup_epochs: usize,
    pub warmup: WarmupMode,
    /// Seeds the per-epoch data order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            optimizer: OptimizerConfig::default(),
            swa_epochs: 0,
            eta_min_ratio: 0.1,
            warmup_epochs: 5,
            warmup: WarmupMode::Auto,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn uses_warmup(&self, num_workers: usize) -> bool {
        match self.warmup {
            WarmupMode::Auto => num_workers > 1,
            WarmupMode::On => true,
            WarmupMode::Off => false,
        }
    }

    /// Learning-rate plan for `num_workers` replicas (`η₁ = k·η₀`).
    pub fn lr_plan(&self, num_workers: usize, steps_per_epoch: usize) -> Result<LrPlan> {
        self.optimizer.validate()?;
        let plan = LrPlan {
            policy: WarmupScalingPolicy::new(self.optimizer.base_lr, num_workers, self.warmup_epochs)?,
            use_warmup: self.uses_warmup(num_workers),
            epochs: self.epochs,
            swa_epochs: self.swa_epochs,
            eta_min_ratio: self.eta_min_ratio,
            steps_per_epoch: steps_per_epoch.max(1),
        };
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean training loss over each epoch's steps (before each update).
    pub epoch_losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub steps: usize,
}

/// Sample order for one epoch; identical on every worker.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[0x6f_72_64, epoch as u64]));
    order
}

/// Trains `model` in place on `data` with mini-batches of `optimizer.batch_size`.
pub fn train<M: TrainableModel>(model: &mut M, data: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Empty("train"));
    }
    let batch_size = cfg.optimizer.batch_size;
    let steps_per_epoch = data.len().div_ceil(batch_size);
    let plan = cfg.lr_plan(1, steps_per_epoch)?;
    let mut sgd = Sgd::new(cfg.optimizer)?;
    let mut swa = if cfg.swa_epochs > 0 { Some(SwaState::new(model.params(), cfg.swa_epochs)?) } else { None };

    let mut out = TrainOutcome::default();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = model.loss_and_grad(model.params(), &batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged);
            }
            let lr = plan.lr(epoch, step)?;
            sgd.step(model.params_mut(), &grads, lr)?;
            loss_sum += loss;
            steps += 1;
        }
        if !model.params().is_finite() {
            return Err(Error::Diverged);
        }
        if let Some(swa) = swa.as_mut().filter(|_| plan.is_swa_epoch(epoch)) {
            swa.update(model.params())?;
        }
        out.epoch_losses.push(loss_sum / steps as f64);
        out.epoch_seconds.push(started.elapsed().as_secs_f64());
        out.steps += steps;
    }
    if let Some(swa) = swa {
        swa.finalize(model.params_mut())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetConfig};
    use crate::models::{Activation, EncoderSpec, VisionClassifier};
    use crate::optimize::SwaState;

    fn data() -> Vec<Sample> {
        generate_dataset(&DatasetConfig {
            num_classes: 4,
            input_dim: 5,
            text_dim: 3,
            num_id_domains: 1,
            num_ood_domains: 1,
            samples_per_class_per_domain: 20,
            ..Default::default()
        })
        .unwrap()
        .train
    }

    fn model() -> VisionClassifier {
        let spec = EncoderSpec { input_dim: 5, hidden_dims: vec![8], output_dim: 6, activation: Activation::Tanh, seed: 1 };
        VisionClassifier::new(&spec, 4, 2).unwrap()
    }

    fn cfg(epochs: usize, swa: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            optimizer: OptimizerConfig { base_lr: 0.05, momentum: 0.9, weight_decay: 1e-4, batch_size: 16 },
            swa_epochs: swa,
            ..Default::default()
        }
    }

    #[test]
    fn loss_decreases() {
        let d = data();
        let mut m = model();
        let out = train(&mut m, &d, &cfg(15, 0)).unwrap();
        assert!(out.epoch_losses.last().unwrap() < &out.epoch_losses[0]);
        assert_eq!(out.steps, 15 * d.len().div_ceil(16));
    }

    #[test]
    fn deterministic() {
        let d = data();
        let (mut a, mut b) = (model(), model());
        train(&mut a, &d, &cfg(3, 0)).unwrap();
        train(&mut b, &d, &cfg(3, 0)).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn linear_probe_keeps_encoder_bit_identical() {
        let d = data();
        let mut m = model();
        m.set_linear_probe_mode(true);
        let before = m.params().clone();
        train(&mut m, &d, &cfg(4, 0)).unwrap();
        for idx in m.encoder_param_indices() {
            assert_eq!(m.params().tensor(idx), before.tensor(idx));
        }
        let head = m.head().weight;
        assert_ne!(m.params().tensor(head), before.tensor(head));
    }

    #[test]
    fn swa_equals_mean_of_final_epoch_checkpoints() {
        // replay the first run epoch by epoch, logging end-of-epoch checkpoints
        let d = data();
        let epochs = 6;
        let swa_epochs = 3;
        let mut with_swa = model();
        train(&mut with_swa, &d, &cfg(epochs, swa_epochs)).unwrap();

        let c = cfg(epochs, swa_epochs);
        let steps = d.len().div_ceil(16);
        let plan = c.lr_plan(1, steps).unwrap();
        let mut m = model();
        let mut sgd = Sgd::new(c.optimizer).unwrap();
        let mut log = Vec::new();
        for epoch in 0..epochs {
            let order = epoch_order(d.len(), c.seed, epoch);
            for (step, chunk) in order.chunks(16).enumerate() {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &d[i]).collect();
                let (_, g) = m.loss_and_grad(m.params(), &batch).unwrap();
                sgd.step(m.params_mut(), &g, plan.lr(epoch, step).unwrap()).unwrap();
            }
            if epoch >= epochs - swa_epochs {
                log.push(m.params().flatten());
            }
        }
        let got = with_swa.params().flatten();
        for (j, g) in got.iter().enumerate() {
            let mean = log.iter().map(|w| w[j]).sum::<f64>() / log.len() as f64;
            assert!((g - mean).abs() < 1e-12);
        }
        // and the state is independent of later training
        let mut state = SwaState::new(m.params(), 1).unwrap();
        state.update(m.params()).unwrap();
        let frozen = state.averaged_weights().clone();
        let _ = train(&mut m, &d, &cfg(1, 0)).unwrap();
        assert_eq!(state.averaged_weights(), &frozen);
    }

    #[test]
    fn overlapping_warmup_and_swa_rejected() {
        let d = data();
        let mut m = model();
        let mut c = cfg(12, 10);
        c.warmup = WarmupMode::On;
        assert!(matches!(train(&mut m, &d, &c), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let d = data();
        let mut m = model();
        let mut c = cfg(5, 0);
        c.optimizer.base_lr = 1e200;
        assert!(matches!(train(&mut m, &d, &c), Err(Error::Diverged)));
    }
}
