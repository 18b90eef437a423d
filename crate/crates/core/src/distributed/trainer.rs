use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::ring::ring_all_reduce;
use super::shard::{shard_batch, ShardPolicy};
use super::socket::local_socket_ring;
use super::transport::{InProcessTransport, RingTransport, TransportKind, DEFAULT_TIMEOUT_SECS};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::TrainableModel;
use crate::optimize::{Sgd, SwaState};
use crate::train::{epoch_order, TrainConfig, TrainOutcome};

/// Replica-synchrony tolerance (max absolute parameter difference).
pub const SYNC_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerGroup {
    pub num_workers: usize,
    pub transport: TransportKind,
    pub per_worker_batch: usize,
    pub timeout_secs: f64,
    pub shard_policy: ShardPolicy,
    /// All-reduce the weights after every step and fail on replica drift.
    pub verify_sync: bool,
}

impl Default for WorkerGroup {
    fn default() -> Self {
        Self {
            num_workers: 1,
            transport: TransportKind::InProcess,
            per_worker_batch: 128,
            timeout_secs: DEFAULT_TIMEOUT_SECS as f64,
            shard_policy: ShardPolicy::Truncate,
            verify_sync: true,
        }
    }
}

impl WorkerGroup {
    pub fn new(num_workers: usize, transport: TransportKind) -> Self {
        Self { num_workers, transport, ..Self::default() }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn global_batch(&self) -> usize {
        self.num_workers * self.per_worker_batch
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_workers == 0 || self.per_worker_batch == 0 {
            return Err(Error::config("num_workers and per_worker_batch must be >= 1"));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::config("timeout_secs must be > 0"));
        }
        Ok(())
    }

    /// Connected endpoints for every rank, all hosted by this process.
    pub fn local_endpoints(&self) -> Result<Vec<Box<dyn RingTransport>>> {
        self.validate()?;
        Ok(match self.transport {
            TransportKind::InProcess => InProcessTransport::ring(self.num_workers, self.timeout())?
                .into_iter()
                .map(|t| Box::new(t) as Box<dyn RingTransport>)
                .collect(),
            TransportKind::Socket => local_socket_ring(self.num_workers, self.timeout())?
                .into_iter()
                .map(|t| Box::new(t) as Box<dyn RingTransport>)
                .collect(),
        })
    }
}

/// The global batches of one epoch, each already split into per-rank shards.
fn epoch_batches(n: usize, epoch: usize, cfg: &TrainConfig, group: &WorkerGroup) -> Result<Vec<Vec<Vec<usize>>>> {
    let order = epoch_order(n, cfg.seed, epoch);
    let mut out = Vec::with_capacity(n.div_ceil(group.global_batch()));
    for chunk in order.chunks(group.global_batch()) {
        match shard_batch(chunk, group.num_workers, group.shard_policy) {
            Ok(s) => out.push(s),
            // a tail shorter than the group contributes nothing
            Err(Error::Empty(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Training loop run by one rank. Every rank must call this with the same
/// initial model, data and configuration.
pub fn worker_loop<M: TrainableModel>(
    transport: &mut dyn RingTransport,
    model: &mut M,
    data: &[Sample],
    cfg: &TrainConfig,
    group: &WorkerGroup,
) -> Result<TrainOutcome> {
    group.validate()?;
    let (rank, k) = (transport.rank(), transport.world_size());
    if k != group.num_workers {
        return Err(Error::config(format!("transport has {k} ranks but the group expects {}", group.num_workers)));
    }
    if data.is_empty() {
        return Err(Error::Empty("train"));
    }
    let steps_per_epoch = epoch_batches(data.len(), 0, cfg, group)?.len();
    if steps_per_epoch == 0 {
        return Err(Error::Empty("shard"));
    }
    let plan = cfg.lr_plan(k, steps_per_epoch)?;
    let mut sgd = Sgd::new(cfg.optimizer)?;
    let mut swa = if cfg.swa_epochs > 0 { Some(SwaState::new(model.params(), cfg.swa_epochs)?) } else { None };

    let mut out = TrainOutcome::default();
    let mut global_step = 0;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let batches = epoch_batches(data.len(), epoch, cfg, group)?;
        for (step, shards) in batches.iter().enumerate() {
            let batch: Vec<&Sample> = shards[rank].iter().map(|&i| &data[i]).collect();
            let (loss, mut grads) = model.loss_and_grad(model.params(), &batch)?;
            // the local loss rides along with the gradient
            let mut buf = grads.flatten();
            buf.push(loss);
            ring_all_reduce(transport, &mut buf)?;
            buf.iter_mut().for_each(|v| *v /= k as f64);
            let mean_loss = buf.pop().expect("loss slot");
            if !mean_loss.is_finite() {
                return Err(Error::Diverged);
            }
            grads.assign_flat(&buf)?;
            sgd.step(model.params_mut(), &grads, plan.lr(epoch, step)?)?;
            global_step += 1;
            if group.verify_sync && k > 1 {
                check_sync(transport, model, global_step)?;
            }
            loss_sum += mean_loss;
        }
        if let Some(swa) = swa.as_mut().filter(|_| plan.is_swa_epoch(epoch)) {
            swa.update(model.params())?;
        }
        out.epoch_losses.push(loss_sum / batches.len() as f64);
        out.epoch_seconds.push(started.elapsed().as_secs_f64());
        out.steps += batches.len();
    }
    if let Some(swa) = swa {
        swa.finalize(model.params_mut())?;
    }
    Ok(out)
}

/// Compares local weights with the cross-replica mean.
fn check_sync<M: TrainableModel>(transport: &mut dyn RingTransport, model: &M, step: usize) -> Result<()> {
    let local = model.params().flatten();
    let mut mean = local.clone();
    ring_all_reduce(transport, &mut mean)?;
    let k = transport.world_size() as f64;
    let max_diff = mean.iter().zip(&local).map(|(m, w)| (m / k - w).abs()).fold(0.0, f64::max);
    if max_diff.is_nan() || max_diff > SYNC_TOLERANCE {
        return Err(Error::ReplicaDivergence { step, max_diff });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct DataParallelOutcome<M> {
    /// Final model of every rank, in rank order.
    pub replicas: Vec<M>,
    /// Losses are the cross-rank means; epoch times are the slowest rank's.
    pub train: TrainOutcome,
}

/// Runs `group.num_workers` ranks on threads of this process and returns
/// their final replicas.
pub fn train_data_parallel<M: TrainableModel>(
    model: &M,
    data: &[Sample],
    cfg: &TrainConfig,
    group: &WorkerGroup,
) -> Result<DataParallelOutcome<M>> {
    let endpoints = group.local_endpoints()?;
    let results: Vec<Result<(M, TrainOutcome)>> = thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .map(|mut t| {
                let mut replica = model.clone();
                scope.spawn(move || {
                    let out = worker_loop(t.as_mut(), &mut replica, data, cfg, group)?;
                    Ok((replica, out))
                })
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(rank, h)| {
                h.join().unwrap_or_else(|_| Err(Error::Transport { rank, message: "worker panicked".into() }))
            })
            .collect()
    });

    // report the root cause rather than the hang-ups it triggered downstream
    if results.iter().any(Result::is_err) {
        let mut errors: Vec<Error> = results.into_iter().filter_map(Result::err).collect();
        let root = errors.iter().position(|e| !matches!(e, Error::Transport { .. } | Error::Timeout { .. }));
        return Err(errors.swap_remove(root.unwrap_or(0)));
    }
    let (replicas, outcomes): (Vec<M>, Vec<TrainOutcome>) = results.into_iter().map(Result::unwrap).unzip();
    let mut train = outcomes[0].clone();
    for o in &outcomes[1..] {
        for (t, s) in train.epoch_seconds.iter_mut().zip(&o.epoch_seconds) {
            *t = t.max(*s);
        }
    }
    Ok(DataParallelOutcome { replicas, train })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetConfig};
    use crate::models::{Activation, EncoderSpec, VisionClassifier};
    use crate::optimize::OptimizerConfig;
    use crate::train::{train, WarmupMode};

    fn setup() -> (Vec<Sample>, VisionClassifier, TrainConfig) {
        let data = generate_dataset(&DatasetConfig {
            num_classes: 3,
            input_dim: 4,
            text_dim: 2,
            num_id_domains: 1,
            num_ood_domains: 1,
            samples_per_class_per_domain: 15,
            ..Default::default()
        })
        .unwrap()
        .train;
        let spec = EncoderSpec { input_dim: 4, hidden_dims: vec![5], output_dim: 4, activation: Activation::Tanh, seed: 3 };
        let model = VisionClassifier::new(&spec, 3, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            optimizer: OptimizerConfig { base_lr: 0.05, momentum: 0.9, weight_decay: 1e-4, batch_size: 8 },
            warmup: WarmupMode::Off,
            ..Default::default()
        };
        (data, model, cfg)
    }

    #[test]
    fn single_rank_matches_plain_trainer_bitwise() {
        let (data, model, cfg) = setup();
        let mut plain = model.clone();
        let plain_out = train(&mut plain, &data, &cfg).unwrap();
        let group = WorkerGroup { per_worker_batch: 8, ..WorkerGroup::new(1, TransportKind::InProcess) };
        let dp = train_data_parallel(&model, &data, &cfg, &group).unwrap();
        assert_eq!(dp.replicas[0].params(), plain.params());
        assert_eq!(dp.train.epoch_losses, plain_out.epoch_losses);
    }

    #[test]
    fn replicas_stay_identical() {
        let (data, model, cfg) = setup();
        let group = WorkerGroup { per_worker_batch: 4, ..WorkerGroup::new(3, TransportKind::InProcess) };
        let dp = train_data_parallel(&model, &data, &cfg, &group).unwrap();
        for r in &dp.replicas[1..] {
            assert!(r.params().max_abs_diff(dp.replicas[0].params()).unwrap() <= SYNC_TOLERANCE);
        }
    }

    #[test]
    fn diverging_replica_is_detected() {
        let (data, model, cfg) = setup();
        let group = WorkerGroup { per_worker_batch: 4, timeout_secs: 5.0, ..WorkerGroup::new(2, TransportKind::InProcess) };
        let mut endpoints = group.local_endpoints().unwrap();
        let mut t1 = endpoints.pop().unwrap();
        let mut t0 = endpoints.pop().unwrap();
        let mut perturbed = model.clone();
        perturbed.params_mut().tensor_mut(0).data_mut()[0] += 1e-6;
        let results = thread::scope(|s| {
            let (d, c, g) = (&data, &cfg, &group);
            let mut m0 = model.clone();
            let h0 = s.spawn(move || worker_loop(t0.as_mut(), &mut m0, d, c, g));
            let h1 = s.spawn(move || worker_loop(t1.as_mut(), &mut perturbed, d, c, g));
            [h0.join().unwrap(), h1.join().unwrap()]
        });
        assert!(results.iter().any(|r| matches!(r, Err(Error::ReplicaDivergence { step: 1, .. }))));
    }

    #[test]
    fn tail_shorter_than_group_is_skipped() {
        let (data, _, cfg) = setup();
        let group = WorkerGroup { per_worker_batch: 4, ..WorkerGroup::new(4, TransportKind::InProcess) };
        let n = data.len();
        let batches = epoch_batches(n, 0, &cfg, &group).unwrap();
        assert_eq!(batches.len(), n / 16 + usize::from(n % 16 >= 4));
        assert!(batches.last().unwrap().iter().all(|s| s.len() == (n % 16) / 4));
        let tiny = WorkerGroup { per_worker_batch: 4, ..WorkerGroup::new(50, TransportKind::InProcess) };
        assert!(epoch_batches(data.len(), 0, &cfg, &tiny).unwrap().is_empty());
    }
}
