use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Metric, Variant, ZeroShotInit};
use crate::data::{generate_dataset, pretext_pool, subsample_fraction, DatasetSource, Sample, SplitBundle};
use crate::distributed::{train_data_parallel, TransportKind, WorkerGroup};
use crate::error::{Error, Result};
use crate::eval::{classifier_predict, metric_report, random_baseline, zero_shot_predict, MetricReport};
use crate::models::{Checkpoint, CheckpointHeader, ClipTrainScope, DualEncoder, TrainableModel, VisionClassifier};
use crate::numerics::Tensor;
use crate::optimize::OptimizerConfig;
use crate::rng::derive_seed;
use crate::train::{train, TrainConfig, TrainOutcome, WarmupMode};

const SEED_PRETRAIN: u64 = 0x9e7a;
const SEED_VISION: u64 = 0x7151;
const SEED_HEAD: u64 = 0x4ead;
const SEED_ORDER: u64 = 0x0dde;
const SEED_SUBSAMPLE: u64 = 0x5ab5;

/// Both metrics on the ID and OOD test splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub id: MetricReport,
    pub ood: MetricReport,
}

impl SplitMetrics {
    pub fn id_metric(&self, metric: Metric) -> f64 {
        pick(&self.id, metric)
    }

    pub fn ood_metric(&self, metric: Metric) -> f64 {
        pick(&self.ood, metric)
    }
}

fn pick(r: &MetricReport, metric: Metric) -> f64 {
    match metric {
        Metric::Top1 => r.top1,
        Metric::MacroF1 => r.macro_f1,
    }
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub metrics: SplitMetrics,
    pub checkpoint: Checkpoint,
    pub train: TrainOutcome,
}

/// Dataset, class captions and the contrastively pretrained CLIP model
/// shared by every run of one configuration.
pub struct ExperimentContext {
    pub config: ExperimentConfig,
    pub data: SplitBundle,
    pub captions: Vec<Tensor>,
    pretrained: Option<DualEncoder>,
}

impl ExperimentContext {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let data = generate_dataset(&config.dataset)?;
        Self::with_data(config, data)
    }

    pub fn from_source(config: ExperimentConfig, source: &dyn DatasetSource) -> Result<Self> {
        config.validate()?;
        Self::with_data(config, source.load()?)
    }

    fn with_data(config: ExperimentConfig, data: SplitBundle) -> Result<Self> {
        let captions = crate::data::class_captions(&config.dataset);
        let mut ctx = Self { config, data, captions, pretrained: None };
        if ctx.config.pretrain.enabled {
            ctx.pretrained = Some(ctx.pretrain()?);
        }
        Ok(ctx)
    }

    /// Contrastive pretraining on a pretext pool disjoint from the task's domains.
    fn pretrain(&self) -> Result<DualEncoder> {
        let cfg = &self.config;
        let p = &cfg.pretrain;
        let covered = p.classes_covered(cfg.dataset.num_classes);
        let pool = pretext_pool(&cfg.dataset, p.num_domains, p.samples_per_class_per_domain, covered)?;
        let seed = derive_seed(cfg.dataset.seed, &[SEED_PRETRAIN]);
        let mut model = DualEncoder::new(cfg.dual_encoder_spec(seed))?;
        let tc = TrainConfig {
            epochs: p.epochs,
            optimizer: OptimizerConfig {
                base_lr: p.lr,
                momentum: cfg.model.momentum,
                weight_decay: p.weight_decay,
                batch_size: p.batch_size,
            },
            swa_epochs: 0,
            eta_min_ratio: cfg.eta_min_ratio,
            warmup_epochs: 0,
            warmup: WarmupMode::Off,
            seed,
        };
        let out = train(&mut model, &pool, &tc)?;
        info!(
            "pretrained CLIP on {} pairs: loss {:.4} -> {:.4}",
            pool.len(),
            out.epoch_losses.first().copied().unwrap_or(f64::NAN),
            out.epoch_losses.last().copied().unwrap_or(f64::NAN)
        );
        Ok(model)
    }

    /// The CLIP starting point for fine-tuning: pretrained when enabled,
    /// otherwise a seeded random initialization.
    pub fn clip_model(&self, seed: u64) -> Result<DualEncoder> {
        match &self.pretrained {
            Some(m) => Ok(m.clone()),
            None => DualEncoder::new(self.config.dual_encoder_spec(derive_seed(seed, &[SEED_PRETRAIN]))),
        }
    }

    /// The CLIP image tower with a fresh classification head.
    pub fn clip_probe_model(&self, seed: u64) -> Result<VisionClassifier> {
        let (spec, weights) = self.clip_model(seed)?.image_tower();
        VisionClassifier::from_encoder(&spec, &weights, self.config.dataset.num_classes, derive_seed(seed, &[SEED_HEAD]))
    }

    pub fn vision_model(&self, seed: u64) -> Result<VisionClassifier> {
        VisionClassifier::new(
            &self.config.image_encoder_spec(derive_seed(seed, &[SEED_VISION])),
            self.config.dataset.num_classes,
            derive_seed(seed, &[SEED_HEAD]),
        )
    }

    pub fn train_config(&self, variant: Variant, lr: f64, weight_decay: f64, seed: u64) -> TrainConfig {
        let c = &self.config;
        TrainConfig {
            epochs: c.epochs,
            optimizer: OptimizerConfig {
                base_lr: lr,
                momentum: c.model.momentum,
                weight_decay,
                batch_size: c.batch_size,
            },
            swa_epochs: if variant.uses_swa() { c.swa_epochs } else { 0 },
            eta_min_ratio: c.eta_min_ratio,
            warmup_epochs: c.warmup_epochs,
            warmup: c.warmup,
            seed: derive_seed(seed, &[SEED_ORDER]),
        }
    }

    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Vec<Sample>> {
        subsample_fraction(&self.data.train, fraction, derive_seed(seed, &[SEED_SUBSAMPLE, fraction.to_bits()]))
    }

    pub fn evaluate_clip(&self, model: &DualEncoder) -> Result<SplitMetrics> {
        let k = self.config.dataset.num_classes;
        let id = zero_shot_predict(model, &self.data.id_test, &self.captions)?;
        let ood = zero_shot_predict(model, &self.data.ood_test, &self.captions)?;
        Ok(SplitMetrics {
            id: metric_report(&id, &labels(&self.data.id_test), k)?,
            ood: metric_report(&ood, &labels(&self.data.ood_test), k)?,
        })
    }

    pub fn evaluate_vision(&self, model: &VisionClassifier) -> Result<SplitMetrics> {
        let k = self.config.dataset.num_classes;
        let id = classifier_predict(model, &self.data.id_test)?;
        let ood = classifier_predict(model, &self.data.ood_test)?;
        Ok(SplitMetrics {
            id: metric_report(&id, &labels(&self.data.id_test), k)?,
            ood: metric_report(&ood, &labels(&self.data.ood_test), k)?,
        })
    }
}

fn labels(samples: &[Sample]) -> Vec<usize> {
    samples.iter().map(|s| s.label).collect()
}

fn fit<M: TrainableModel>(model: &mut M, data: &[Sample], cfg: &TrainConfig, workers: usize) -> Result<TrainOutcome> {
    if workers == 1 {
        return train(model, data, cfg);
    }
    let group = WorkerGroup {
        per_worker_batch: cfg.optimizer.batch_size,
        ..WorkerGroup::new(workers, TransportKind::InProcess)
    };
    let out = train_data_parallel(model, data, cfg, &group)?;
    *model = out.replicas.into_iter().next().expect("at least one replica");
    Ok(out.train)
}

/// Fine-tunes one variant on a `fraction` subsample and scores it on the
/// full ID and OOD test splits.
pub fn run_variant(
    ctx: &ExperimentContext,
    variant: Variant,
    fraction: f64,
    lr: f64,
    weight_decay: f64,
    seed: u64,
) -> Result<VariantRun> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("run_variant needs a fraction in (0, 1], got {fraction}")));
    }
    let data = ctx.subsample(fraction, seed)?;
    if data.is_empty() {
        return Err(Error::Empty("training subsample"));
    }
    let cfg = ctx.train_config(variant, lr, weight_decay, seed);
    let workers = ctx.config.workers;
    debug!("{variant} f={fraction} lr={lr} wd={weight_decay} seed={seed}: {} samples", data.len());
    if variant.is_contrastive() {
        let mut model = ctx.clip_model(seed)?;
        model.set_train_scope(ClipTrainScope::Full);
        let train = fit(&mut model, &data, &cfg, workers)?;
        let metrics = ctx.evaluate_clip(&model)?;
        let checkpoint = Checkpoint {
            header: CheckpointHeader::DualEncoder { spec: model.spec().clone() },
            params: model.params().clone(),
        };
        Ok(VariantRun { metrics, checkpoint, train })
    } else {
        let (encoder, mut model) = if variant.is_clip() {
            let spec = ctx.clip_model(seed)?.image_tower().0;
            (spec, ctx.clip_probe_model(seed)?)
        } else {
            (ctx.config.image_encoder_spec(derive_seed(seed, &[SEED_VISION])), ctx.vision_model(seed)?)
        };
        model.set_linear_probe_mode(variant.is_linear_probe());
        let train = fit(&mut model, &data, &cfg, workers)?;
        let metrics = ctx.evaluate_vision(&model)?;
        let checkpoint = Checkpoint {
            header: CheckpointHeader::VisionClassifier { encoder, num_classes: model.num_classes() },
            params: model.params().clone(),
        };
        Ok(VariantRun { metrics, checkpoint, train })
    }
}

/// The no-training column: zero-shot CLIP, or chance level for models
/// whose classification head is still untrained.
pub fn run_zero_shot(ctx: &ExperimentContext, variant: Variant, seed: u64) -> Result<SplitMetrics> {
    if variant.is_contrastive() {
        let model = match ctx.config.zero_shot_init {
            ZeroShotInit::Pretrained => ctx.clip_model(seed)?,
            ZeroShotInit::Random => {
                DualEncoder::new(ctx.config.dual_encoder_spec(derive_seed(seed, &[SEED_PRETRAIN, 1])))?
            }
        };
        return ctx.evaluate_clip(&model);
    }
    let k = ctx.config.dataset.num_classes;
    let chance = random_baseline(k)?;
    let report = |n| MetricReport { top1: chance, macro_f1: chance, per_class_f1: Vec::new(), n_samples: n };
    Ok(SplitMetrics { id: report(ctx.data.id_test.len()), ood: report(ctx.data.ood_test.len()) })
}
