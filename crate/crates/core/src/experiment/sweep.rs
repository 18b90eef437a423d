use std::sync::atomic::{AtomicUsize, Ordering};

use log::{info, warn};
use rayon::prelude::*;

use super::report::{build_report, ExperimentReport};
use super::runner::{run_variant, run_zero_shot, ExperimentContext};
use super::store::{ResultsStore, RunKey, RunOutcome};
use crate::error::Result;

/// Every run key of the configured grid, in a fixed order.
pub fn sweep_keys(ctx: &ExperimentContext) -> Vec<RunKey> {
    let c = &ctx.config;
    let mut keys = Vec::new();
    for &variant in &c.variants {
        for &fraction in &c.fractions {
            let pairs: Vec<(f64, f64)> = if fraction == 0.0 {
                vec![(0.0, 0.0)]
            } else {
                c.lr_grid.iter().flat_map(|&lr| c.weight_decay_grid.iter().map(move |&wd| (lr, wd))).collect()
            };
            for (lr, weight_decay) in pairs {
                for seed in 0..c.seeds as u64 {
                    keys.push(RunKey { variant, fraction, lr, weight_decay, seed });
                }
            }
        }
    }
    keys
}

/// Executes one grid point. Failures become records, not errors.
pub fn execute(ctx: &ExperimentContext, key: &RunKey) -> RunOutcome {
    let result = if key.fraction == 0.0 {
        run_zero_shot(ctx, key.variant, key.seed).map(|metrics| RunOutcome::Ok { metrics, final_train_loss: None })
    } else {
        run_variant(ctx, key.variant, key.fraction, key.lr, key.weight_decay, key.seed).map(|run| RunOutcome::Ok {
            metrics: run.metrics,
            final_train_loss: run.train.epoch_losses.last().copied(),
        })
    };
    result.unwrap_or_else(|e| {
        warn!("{} f={} lr={} wd={} seed={} failed: {e}", key.variant, key.fraction, key.lr, key.weight_decay, key.seed);
        RunOutcome::Failed { error: e.to_string() }
    })
}

/// Runs every grid point missing from `store` (in parallel) and aggregates
/// the full grid into a report.
pub fn run_sweep(ctx: &ExperimentContext, store: &ResultsStore) -> Result<ExperimentReport> {
    let pending: Vec<RunKey> = sweep_keys(ctx).into_iter().filter(|k| !store.contains(k)).collect();
    let total = pending.len();
    info!("{total} runs pending ({} already stored)", store.len());
    let done = AtomicUsize::new(0);
    pending.par_iter().try_for_each(|key| -> Result<()> {
        let outcome = execute(ctx, key);
        store.append(*key, outcome)?;
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        if n % 100 == 0 || n == total {
            info!("{n}/{total} runs finished");
        }
        Ok(())
    })?;
    Ok(build_report(&ctx.config, &store.records()))
}
