use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::runner::{ExperimentContext, SplitMetrics};
use crate::distributed::{
    scale_efficiency, train_data_parallel, worker_loop, RingTransport, TimingRecord, TransportKind, WorkerGroup,
};
use crate::error::{Error, Result};
use crate::models::{ClipTrainScope, DualEncoder};
use crate::optimize::OptimizerConfig;
use crate::train::{TrainConfig, TrainOutcome, WarmupMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub worker_counts: Vec<usize>,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub swa_epochs: usize,
    /// Single-worker learning rate; k workers use `k · base_lr`.
    pub base_lr: f64,
    pub weight_decay: f64,
    pub per_worker_batch: usize,
    pub transport: TransportKind,
    pub timeout_secs: f64,
    pub verify_sync: bool,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            worker_counts: vec![1, 2, 4, 8],
            epochs: 30,
            warmup_epochs: 5,
            swa_epochs: 10,
            base_lr: 1e-3,
            weight_decay: 1e-4,
            per_worker_batch: 128,
            transport: TransportKind::InProcess,
            timeout_secs: 30.0,
            verify_sync: false,
            seed: 0,
        }
    }
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.worker_counts;
        if w.first() != Some(&1) || w.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::config("worker_counts must ascend strictly from 1"));
        }
        Ok(())
    }

    pub fn group(&self, k: usize) -> WorkerGroup {
        WorkerGroup {
            num_workers: k,
            transport: self.transport,
            per_worker_batch: self.per_worker_batch,
            timeout_secs: self.timeout_secs,
            verify_sync: self.verify_sync,
            ..WorkerGroup::default()
        }
    }

    pub fn train_config(&self, momentum: f64, eta_min_ratio: f64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            optimizer: OptimizerConfig {
                base_lr: self.base_lr,
                momentum,
                weight_decay: self.weight_decay,
                batch_size: self.per_worker_batch,
            },
            swa_epochs: self.swa_epochs,
            eta_min_ratio,
            warmup_epochs: self.warmup_epochs,
            warmup: WarmupMode::On,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub workers: usize,
    pub mean_epoch_seconds: Option<f64>,
    /// Relative to the single-worker row.
    pub scale_efficiency: Option<f64>,
    pub metrics: Option<SplitMetrics>,
    pub epoch_losses: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub config: ScalingConfig,
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    pub fn row(&self, workers: usize) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.workers == workers)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("workers,mean_epoch_seconds,scale_efficiency,id,ood,final_loss,error\n");
        let opt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| v.to_string());
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.workers,
                opt(r.mean_epoch_seconds),
                opt(r.scale_efficiency),
                opt(r.metrics.as_ref().map(|m| m.id.top1)),
                opt(r.metrics.as_ref().map(|m| m.ood.top1)),
                opt(r.epoch_losses.last().copied()),
                r.error.as_deref().unwrap_or("")
            ));
        }
        out
    }

    /// `epoch,loss_k1,loss_k2,...` for plotting the loss curves side by side.
    pub fn loss_curves_csv(&self) -> String {
        let mut out = String::from("epoch");
        for r in &self.rows {
            out.push_str(&format!(",k{}", r.workers));
        }
        out.push('\n');
        for e in 0..self.config.epochs {
            out.push_str(&e.to_string());
            for r in &self.rows {
                out.push(',');
                if let Some(l) = r.epoch_losses.get(e) {
                    out.push_str(&l.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

fn scaling_model(ctx: &ExperimentContext, cfg: &ScalingConfig) -> Result<DualEncoder> {
    let mut model = ctx.clip_model(cfg.seed)?;
    model.set_train_scope(ClipTrainScope::Full);
    Ok(model)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn row_from(k: usize, result: Result<(TrainOutcome, SplitMetrics)>) -> ScalingRow {
    match result {
        Ok((train, metrics)) => ScalingRow {
            workers: k,
            mean_epoch_seconds: Some(mean(&train.epoch_seconds)),
            scale_efficiency: None,
            metrics: Some(metrics),
            epoch_losses: train.epoch_losses,
            error: None,
        },
        Err(e) => {
            warn!("scaling run with {k} workers failed: {e}");
            ScalingRow {
                workers: k,
                mean_epoch_seconds: None,
                scale_efficiency: None,
                metrics: None,
                epoch_losses: Vec::new(),
                error: Some(e.to_string()),
            }
        }
    }
}

/// Fine-tunes the pretrained CLIP model with SWA on the full training split
/// for every worker count, all ranks hosted by this process.
pub fn run_scaling_study(ctx: &ExperimentContext, cfg: &ScalingConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    let model = scaling_model(ctx, cfg)?;
    let tc = cfg.train_config(ctx.config.model.momentum, ctx.config.eta_min_ratio);
    let mut rows = Vec::with_capacity(cfg.worker_counts.len());
    for &k in &cfg.worker_counts {
        let result = train_data_parallel(&model, &ctx.data.train, &tc, &cfg.group(k)).and_then(|out| {
            let replica = out.replicas.into_iter().next().expect("at least one replica");
            Ok((out.train, ctx.evaluate_clip(&replica)?))
        });
        let row = row_from(k, result);
        info!(
            "k={k}: {:.3}s/epoch, final loss {:?}",
            row.mean_epoch_seconds.unwrap_or(f64::NAN),
            row.epoch_losses.last()
        );
        rows.push(row);
    }
    let t1 = rows[0].mean_epoch_seconds;
    for row in &mut rows {
        if let (Some(t1), Some(tk)) = (t1, row.mean_epoch_seconds) {
            row.scale_efficiency =
                scale_efficiency(&TimingRecord { epoch_seconds_single: t1, epoch_seconds_k: tk, num_workers: row.workers })
                    .ok();
        }
    }
    Ok(ScalingReport { config: cfg.clone(), rows })
}

/// One rank of a `k`-worker scaling run whose peers live in other processes.
pub fn run_scaling_rank(
    ctx: &ExperimentContext,
    cfg: &ScalingConfig,
    transport: &mut dyn RingTransport,
) -> Result<ScalingRow> {
    let k = transport.world_size();
    let mut model = scaling_model(ctx, cfg)?;
    let tc = cfg.train_config(ctx.config.model.momentum, ctx.config.eta_min_ratio);
    let train = worker_loop(transport, &mut model, &ctx.data.train, &tc, &cfg.group(k))?;
    Ok(row_from(k, Ok((train, ctx.evaluate_clip(&model)?))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::runner::tests::tiny_config;

    #[test]
    fn study_shapes_and_efficiency() {
        let ctx = ExperimentContext::new(tiny_config()).unwrap();
        let cfg = ScalingConfig {
            worker_counts: vec![1, 2],
            epochs: 4,
            warmup_epochs: 1,
            swa_epochs: 2,
            base_lr: 0.01,
            per_worker_batch: 8,
            verify_sync: true,
            ..Default::default()
        };
        let report = run_scaling_study(&ctx, &cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.row(1).unwrap().scale_efficiency, Some(100.0));
        let r2 = report.row(2).unwrap();
        let t1 = report.row(1).unwrap().mean_epoch_seconds.unwrap();
        let expected = 100.0 * (t1 / 2.0) / r2.mean_epoch_seconds.unwrap();
        assert!((r2.scale_efficiency.unwrap() - expected).abs() < 1e-9);
        assert_eq!(r2.epoch_losses.len(), 4);
        assert_eq!(report.loss_curves_csv().lines().count(), 5);
    }

    #[test]
    fn worker_counts_must_start_at_one() {
        let bad = ScalingConfig { worker_counts: vec![2, 4], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ScalingConfig { worker_counts: vec![1, 4, 2], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn overlapping_windows_fail_per_row() {
        let ctx = ExperimentContext::new(tiny_config()).unwrap();
        let cfg = ScalingConfig {
            worker_counts: vec![1],
            epochs: 4,
            warmup_epochs: 3,
            swa_epochs: 2,
            per_worker_batch: 8,
            ..Default::default()
        };
        let report = run_scaling_study(&ctx, &cfg).unwrap();
        assert!(report.rows[0].error.is_some());
    }
}
