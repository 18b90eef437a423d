//! SGD, learning-rate schedules (warmup with linear scaling, per-epoch cosine
//! annealing) and stochastic weight averaging.

mod schedule;
mod sgd;
mod swa;

pub use schedule::{cosine_anneal_lr, warmup_lr, CosineAnnealSchedule, LrPlan, WarmupScalingPolicy};
pub use sgd::{sgd_step, OptimizerConfig, Sgd};
pub use swa::{swa_update, SwaState};
