//! Oracles shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::thread;
use std::time::Duration;

use clipft_core::data::{generate_dataset, DatasetConfig, Sample};
use clipft_core::distributed::{
    local_socket_ring, ring_all_reduce, train_data_parallel, InProcessTransport, RingTransport, TransportKind,
    WorkerGroup,
};
use clipft_core::models::{Activation, DualEncoder, DualEncoderSpec, EncoderSpec, TrainableModel, VisionClassifier};
use clipft_core::numerics::{finite_difference_check, GradCheckOptions, GradCheckReport, Tensor};
use clipft_core::optimize::{OptimizerConfig, Sgd};
use clipft_core::train::{epoch_order, train, TrainConfig, WarmupMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TIMEOUT: Duration = Duration::from_secs(20);

// central differences at epsilon 1e-6 on an O(1) loss carry roundoff near 1e-10
pub const GRAD_FLOOR: f64 = 1e-5;

pub fn endpoints(kind: TransportKind, k: usize) -> Vec<Box<dyn RingTransport>> {
    match kind {
        TransportKind::InProcess => InProcessTransport::ring(k, TIMEOUT)
            .unwrap()
            .into_iter()
            .map(|t| Box::new(t) as Box<dyn RingTransport>)
            .collect(),
        TransportKind::Socket => local_socket_ring(k, TIMEOUT)
            .unwrap()
            .into_iter()
            .map(|t| Box::new(t) as Box<dyn RingTransport>)
            .collect(),
    }
}

pub fn all_reduce_on(kind: TransportKind, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let eps = endpoints(kind, inputs.len());
    thread::scope(|s| {
        let handles: Vec<_> = eps
            .into_iter()
            .zip(inputs)
            .map(|(mut t, input)| {
                s.spawn(move || {
                    let mut buf = input.clone();
                    ring_all_reduce(t.as_mut(), &mut buf).unwrap();
                    buf
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

/// Worst `|out - sum| / max(|sum|, 1)` over every rank and index.
pub fn all_reduce_error(kind: TransportKind, k: usize, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64((k * 10_000 + n) as u64);
    let inputs: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(-1e3..1e3)).collect()).collect();
    let mut oracle = vec![0.0; n];
    for input in &inputs {
        for (o, x) in oracle.iter_mut().zip(input) {
            *o += x;
        }
    }
    let mut worst = 0.0f64;
    for out in all_reduce_on(kind, &inputs) {
        assert_eq!(out.len(), n);
        for (a, b) in out.iter().zip(&oracle) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    worst
}

pub fn small_data() -> DatasetConfig {
    DatasetConfig {
        num_classes: 6,
        input_dim: 5,
        text_dim: 4,
        num_id_domains: 2,
        num_ood_domains: 1,
        samples_per_class_per_domain: 40,
        id_test_fraction: 0.0,
        seed: 11,
        ..Default::default()
    }
}

pub fn encoder(input_dim: usize, seed: u64) -> EncoderSpec {
    EncoderSpec { input_dim, hidden_dims: vec![8], output_dim: 6, activation: Activation::Tanh, seed }
}

pub fn classifier(cfg: &DatasetConfig) -> VisionClassifier {
    VisionClassifier::new(&encoder(cfg.input_dim, 1), cfg.num_classes, 2).unwrap()
}

pub fn dual(cfg: &DatasetConfig) -> DualEncoder {
    DualEncoder::new(DualEncoderSpec {
        image: encoder(cfg.input_dim, 3),
        text: encoder(cfg.text_dim, 4),
        embed_dim: 4,
        temperature: 0.2,
        learn_temperature: false,
    })
    .unwrap()
}

pub fn train_config(epochs: usize, base_lr: f64, batch_size: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        optimizer: OptimizerConfig { base_lr, momentum: 0.9, weight_decay: 1e-3, batch_size },
        warmup: WarmupMode::Off,
        seed: 5,
        ..TrainConfig::default()
    }
}

pub fn max_replica_spread<M: TrainableModel>(replicas: &[M]) -> f64 {
    replicas.iter().map(|r| r.params().max_abs_diff(replicas[0].params()).unwrap()).fold(0.0, f64::max)
}

/// Steps taken and replica spread of the classifier and the dual encoder
/// after 4 ranks × 12 samples × 5 epochs.
pub struct SyncResult {
    pub classifier_steps: usize,
    pub classifier_spread: f64,
    pub dual_steps: usize,
    pub dual_spread: f64,
}

pub fn fifty_step_sync(kind: TransportKind) -> SyncResult {
    let data_cfg = small_data();
    // 480 samples, 4 ranks × 12 per rank → 10 steps per epoch
    let data = generate_dataset(&data_cfg).unwrap().train;
    assert_eq!(data.len(), 480);
    let group = WorkerGroup { per_worker_batch: 12, verify_sync: false, ..WorkerGroup::new(4, kind) };
    let cfg = TrainConfig { warmup: WarmupMode::On, warmup_epochs: 1, ..train_config(5, 0.02, 12) };
    let c = train_data_parallel(&classifier(&data_cfg), &data, &cfg, &group).unwrap();
    let d = train_data_parallel(&dual(&data_cfg), &data, &cfg, &group).unwrap();
    SyncResult {
        classifier_steps: c.train.steps,
        classifier_spread: max_replica_spread(&c.replicas),
        dual_steps: d.train.steps,
        dual_spread: max_replica_spread(&d.replicas),
    }
}

/// Max parameter and per-epoch loss differences between 2 workers × 128 at
/// `η₀` and one worker on 256-sample batches at `2·η₀`, after 5 epochs.
pub fn two_workers_vs_combined_batch() -> (f64, f64) {
    let data_cfg = DatasetConfig { samples_per_class_per_domain: 64, ..small_data() };
    let data = generate_dataset(&data_cfg).unwrap().train;
    // a whole number of 256-sample batches, so neither side sees a tail
    assert_eq!(data.len() % 256, 0);
    let base_lr = 0.01;

    let mut single = classifier(&data_cfg);
    let single_out = train(&mut single, &data, &train_config(5, 2.0 * base_lr, 256)).unwrap();

    let group = WorkerGroup { per_worker_batch: 128, ..WorkerGroup::new(2, TransportKind::InProcess) };
    let parallel = train_data_parallel(&classifier(&data_cfg), &data, &train_config(5, base_lr, 128), &group).unwrap();
    assert_eq!(parallel.train.steps, single_out.steps);

    let params = parallel.replicas.iter().map(|r| r.params().max_abs_diff(single.params()).unwrap()).fold(0.0, f64::max);
    let losses = parallel
        .train
        .epoch_losses
        .iter()
        .zip(&single_out.epoch_losses)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    (params, losses)
}

/// Every rank's shard gradient evaluated at shared weights, averaged, and
/// applied once per global batch.
pub fn simulate_per_shard<M: TrainableModel>(model: &mut M, data: &[Sample], cfg: &TrainConfig, k: usize, per_rank: usize) {
    let global = k * per_rank;
    let steps = data.len() / global;
    let plan = cfg.lr_plan(k, steps).unwrap();
    let mut sgd = Sgd::new(cfg.optimizer).unwrap();
    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), cfg.seed, epoch);
        for (step, chunk) in order.chunks_exact(global).enumerate() {
            let mut sum: Option<Vec<f64>> = None;
            for shard in chunk.chunks(per_rank) {
                let batch: Vec<&Sample> = shard.iter().map(|&i| &data[i]).collect();
                let (_, g) = model.loss_and_grad(model.params(), &batch).unwrap();
                let flat = g.flatten();
                match sum.as_mut() {
                    None => sum = Some(flat),
                    Some(s) => s.iter_mut().zip(&flat).for_each(|(a, b)| *a += b),
                }
            }
            let mut grads = model.params().zeros_like();
            let mean: Vec<f64> = sum.unwrap().into_iter().map(|v| v / k as f64).collect();
            grads.assign_flat(&mean).unwrap();
            let lr = plan.lr(epoch, step).unwrap();
            sgd.step(model.params_mut(), &grads, lr).unwrap();
        }
    }
}

/// Max parameter difference between data-parallel InfoNCE training and the
/// per-shard simulation.
pub fn infonce_vs_simulation(k: usize, per_rank: usize) -> f64 {
    let data_cfg = small_data();
    let data = generate_dataset(&data_cfg).unwrap().train;
    let cfg = TrainConfig { warmup: WarmupMode::On, warmup_epochs: 1, swa_epochs: 0, ..train_config(5, 0.02, per_rank) };
    let mut oracle = dual(&data_cfg);
    simulate_per_shard(&mut oracle, &data, &cfg, k, per_rank);

    let group = WorkerGroup { per_worker_batch: per_rank, ..WorkerGroup::new(k, TransportKind::InProcess) };
    let out = train_data_parallel(&dual(&data_cfg), &data, &cfg, &group).unwrap();
    out.replicas.iter().map(|r| r.params().max_abs_diff(oracle.params()).unwrap()).fold(0.0, f64::max)
}

pub fn random_samples(seed: u64, n: usize, image_dim: usize, text_dim: usize, classes: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Sample {
            image_vector: Tensor::vector((0..image_dim).map(|_| rng.random_range(-1.5..1.5)).collect()),
            caption_vector: Tensor::vector((0..text_dim).map(|_| rng.random_range(-1.5..1.5)).collect()),
            label: i % classes,
            domain_id: 0,
        })
        .collect()
}

fn deep_encoder(input_dim: usize, seed: u64) -> EncoderSpec {
    EncoderSpec { input_dim, hidden_dims: vec![7, 6], output_dim: 5, activation: Activation::Tanh, seed }
}

fn grad_options(seed: u64) -> GradCheckOptions {
    GradCheckOptions { seed, denominator_floor: GRAD_FLOOR, ..Default::default() }
}

/// InfoNCE through both towers and projections; odd seeds freeze the temperature.
pub fn infonce_gradcheck(seed: u64) -> GradCheckReport {
    let model = DualEncoder::new(DualEncoderSpec {
        image: deep_encoder(6, seed),
        text: deep_encoder(4, seed + 100),
        embed_dim: 4,
        temperature: 0.5,
        learn_temperature: seed % 2 == 0,
    })
    .unwrap();
    let data = random_samples(seed, 5, 6, 4, 5);
    let batch: Vec<&Sample> = data.iter().collect();
    finite_difference_check(|p| model.loss_and_grad(p, &batch), model.params(), grad_options(seed)).unwrap()
}

pub fn cross_entropy_gradcheck(seed: u64) -> GradCheckReport {
    let model = VisionClassifier::new(&deep_encoder(6, seed), 4, seed + 7).unwrap();
    let data = random_samples(seed, 6, 6, 2, 4);
    let batch: Vec<&Sample> = data.iter().collect();
    finite_difference_check(|p| model.loss_and_grad(p, &batch), model.params(), grad_options(seed)).unwrap()
}

pub fn relu_classifier_gradcheck() -> GradCheckReport {
    let spec = EncoderSpec { activation: Activation::Relu, ..deep_encoder(6, 3) };
    let model = VisionClassifier::new(&spec, 3, 9).unwrap();
    let data = random_samples(3, 4, 6, 2, 3);
    let batch: Vec<&Sample> = data.iter().collect();
    finite_difference_check(|p| model.loss_and_grad(p, &batch), model.params(), grad_options(0)).unwrap()
}
