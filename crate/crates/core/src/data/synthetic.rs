//! Class prototypes pushed through per-domain affine maps.
//!
//! Every domain `d` owns a seeded transform `A_d(x) = R_d x + t_d`, where
//! `R_d` is a product of Givens rotations and `t_d` a translation; both
//! deviate from the identity in proportion to `domain_shift_strength`. A
//! sample of class `c` in domain `d` is `A_d(μ_c + ε)` with `ε ~ N(0, σ²I)`.
//! Domains `0..num_id_domains` are in-distribution, the next
//! `num_ood_domains` are held out, and anything beyond is available for
//! pretext (pretraining) pools.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Sample, SplitBundle};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::rng_for;

const PROTOTYPE: u64 = 1;
const CAPTION: u64 = 2;
const DOMAIN: u64 = 3;
const SAMPLES: u64 = 4;
const LABEL_NOISE: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub input_dim: usize,
    pub text_dim: usize,
    pub num_id_domains: usize,
    pub num_ood_domains: usize,
    pub samples_per_class_per_domain: usize,
    /// Norm of every class prototype.
    pub class_separation: f64,
    pub domain_shift_strength: f64,
    /// Probability that a training label is replaced by a uniform random class.
    pub label_noise: f64,
    pub seed: u64,
    /// Standard deviation of the isotropic within-class noise.
    pub noise_std: f64,
    /// Geometric per-class frequency decay: class `c` keeps `(1 − r)^c` of its samples.
    pub class_imbalance: f64,
    /// Share of each in-distribution (class, domain) group held out for `id_test`.
    pub id_test_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 62,
            input_dim: 16,
            text_dim: 16,
            num_id_domains: 4,
            num_ood_domains: 2,
            samples_per_class_per_domain: 10,
            class_separation: 8.0,
            domain_shift_strength: 0.15,
            label_noise: 0.1,
            seed: 0,
            noise_std: 1.0,
            class_imbalance: 0.0,
            id_test_fraction: 0.2,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        if self.input_dim == 0 || self.text_dim == 0 {
            return Err(Error::config("input_dim and text_dim must be >= 1"));
        }
        if self.num_id_domains == 0 || self.num_ood_domains == 0 {
            return Err(Error::config("need at least one ID and one OOD domain"));
        }
        if self.samples_per_class_per_domain == 0 {
            return Err(Error::config("samples_per_class_per_domain must be >= 1"));
        }
        if !(self.domain_shift_strength >= 0.0) || !(self.class_separation >= 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::config("shift strength, separation and noise must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::config("label_noise must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.class_imbalance) {
            return Err(Error::config("class_imbalance must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.id_test_fraction) {
            return Err(Error::config("id_test_fraction must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn ood_domains(&self) -> std::ops::Range<usize> {
        self.num_id_domains..self.num_id_domains + self.num_ood_domains
    }

    /// First domain id not used by the task's ID/OOD splits.
    pub fn first_free_domain(&self) -> usize {
        self.num_id_domains + self.num_ood_domains
    }

    fn samples_for_class(&self, class: usize) -> usize {
        let keep = (1.0 - self.class_imbalance).powi(class as i32);
        ((self.samples_per_class_per_domain as f64 * keep).round() as usize).max(1)
    }
}

fn gaussian_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = crate::numerics::norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// One prototype per class, each of norm `class_separation`.
pub fn class_prototypes(config: &DatasetConfig) -> Vec<Vec<f64>> {
    (0..config.num_classes)
        .map(|c| {
            let mut rng = rng_for(config.seed, &[PROTOTYPE, c as u64]);
            unit(gaussian_vec(&mut rng, config.input_dim))
                .into_iter()
                .map(|x| x * config.class_separation)
                .collect()
        })
        .collect()
}

/// Fixed unit-norm caption vector for `label`.
pub fn class_caption(label: usize, config: &DatasetConfig) -> Result<Tensor> {
    if label >= config.num_classes {
        return Err(Error::OutOfRange { index: label, len: config.num_classes });
    }
    let mut rng = rng_for(config.seed, &[CAPTION, label as u64]);
    Ok(Tensor::vector(unit(gaussian_vec(&mut rng, config.text_dim))))
}

pub fn class_captions(config: &DatasetConfig) -> Vec<Tensor> {
    (0..config.num_classes)
        .map(|c| class_caption(c, config).expect("label in range"))
        .collect()
}

/// `x ↦ R x + t` for one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainTransform {
    /// Givens rotations `(i, j, angle)` applied in order.
    rotations: Vec<(usize, usize, f64)>,
    translation: Vec<f64>,
}

impl DomainTransform {
    pub fn apply(&self, x: &mut [f64]) {
        for &(i, j, theta) in &self.rotations {
            let (s, c) = theta.sin_cos();
            let (a, b) = (x[i], x[j]);
            x[i] = c * a - s * b;
            x[j] = s * a + c * b;
        }
        for (v, t) in x.iter_mut().zip(&self.translation) {
            *v += t;
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotations.iter().all(|r| r.2 == 0.0) && self.translation.iter().all(|&t| t == 0.0)
    }
}

/// Seeded transform for `domain`. At zero shift strength it is the identity.
pub fn domain_transform(config: &DatasetConfig, domain: usize) -> DomainTransform {
    let d = config.input_dim;
    let s = config.domain_shift_strength;
    let mut rng = rng_for(config.seed, &[DOMAIN, domain as u64]);
    let mut rotations = Vec::with_capacity(2 * d);
    if d >= 2 {
        for _ in 0..2 * d {
            let i = rng.random_range(0..d);
            let mut j = rng.random_range(0..d - 1);
            if j >= i {
                j += 1;
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            rotations.push((i, j, s * z));
        }
    }
    let dir = unit(gaussian_vec(&mut rng, d));
    let translation = dir.into_iter().map(|x| x * s * config.class_separation).collect();
    DomainTransform { rotations, translation }
}

fn domain_samples(config: &DatasetConfig, domain: usize, prototypes: &[Vec<f64>], captions: &[Tensor]) -> Vec<Vec<Sample>> {
    let transform = domain_transform(config, domain);
    (0..config.num_classes)
        .map(|c| {
            let mut rng = rng_for(config.seed, &[SAMPLES, domain as u64, c as u64]);
            (0..config.samples_for_class(c))
                .map(|_| {
                    let mut x: Vec<f64> = prototypes[c]
                        .iter()
                        .map(|&m| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            m + config.noise_std * z
                        })
                        .collect();
                    transform.apply(&mut x);
                    Sample {
                        image_vector: Tensor::vector(x),
                        caption_vector: captions[c].clone(),
                        label: c,
                        domain_id: domain,
                    }
                })
                .collect()
        })
        .collect()
}

/// Builds the train / ID-test / OOD-test splits. Deterministic in `config`.
pub fn generate_dataset(config: &DatasetConfig) -> Result<SplitBundle> {
    config.validate()?;
    let prototypes = class_prototypes(config);
    let captions = class_captions(config);
    let mut bundle = SplitBundle::default();
    for domain in 0..config.num_id_domains {
        for group in domain_samples(config, domain, &prototypes, &captions) {
            let n_test = (group.len() as f64 * config.id_test_fraction).round() as usize;
            let n_train = group.len() - n_test;
            let mut it = group.into_iter();
            bundle.train.extend(it.by_ref().take(n_train));
            bundle.id_test.extend(it);
        }
    }
    for domain in config.ood_domains() {
        bundle.ood_test.extend(domain_samples(config, domain, &prototypes, &captions).into_iter().flatten());
    }
    if config.label_noise > 0.0 {
        let mut rng = rng_for(config.seed, &[LABEL_NOISE]);
        for s in &mut bundle.train {
            if rng.random::<f64>() < config.label_noise {
                let c = rng.random_range(0..config.num_classes);
                s.label = c;
                s.caption_vector = captions[c].clone();
            }
        }
    }
    Ok(bundle)
}

/// Samples of classes `0..classes_covered` from `num_domains` extra domains
/// (ids past the task's OOD domains), sharing the task's prototypes and captions.
pub fn pretext_pool(
    config: &DatasetConfig,
    num_domains: usize,
    samples_per_class_per_domain: usize,
    classes_covered: usize,
) -> Result<Vec<Sample>> {
    config.validate()?;
    if classes_covered == 0 || classes_covered > config.num_classes {
        return Err(Error::config(format!(
            "pretext pool must cover between 1 and {} classes, got {classes_covered}",
            config.num_classes
        )));
    }
    let cfg = DatasetConfig { samples_per_class_per_domain, class_imbalance: 0.0, ..config.clone() };
    let prototypes = class_prototypes(&cfg);
    let captions = class_captions(&cfg);
    let start = cfg.first_free_domain();
    Ok((start..start + num_domains)
        .flat_map(|d| domain_samples(&cfg, d, &prototypes, &captions).into_iter().take(classes_covered).flatten())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine_similarity;

    fn small() -> DatasetConfig {
        DatasetConfig {
            num_classes: 5,
            input_dim: 6,
            text_dim: 4,
            num_id_domains: 2,
            num_ood_domains: 2,
            samples_per_class_per_domain: 10,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&DatasetConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_sizes_and_domain_disjointness() {
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(b.train.len(), 5 * 2 * 8);
        assert_eq!(b.id_test.len(), 5 * 2 * 2);
        assert_eq!(b.ood_test.len(), 5 * 2 * 10);
        let id = SplitBundle::domains(&b.train);
        let ood = SplitBundle::domains(&b.ood_test);
        assert!(id.is_disjoint(&ood));
        assert!(SplitBundle::domains(&b.id_test).is_disjoint(&ood));
    }

    #[test]
    fn captions_align_with_labels() {
        let cfg = small();
        let b = generate_dataset(&cfg).unwrap();
        for s in b.train.iter().chain(&b.ood_test) {
            assert_eq!(s.caption_vector, class_caption(s.label, &cfg).unwrap());
        }
    }

    #[test]
    fn caption_properties() {
        let cfg = small();
        assert_eq!(class_caption(1, &cfg).unwrap(), class_caption(1, &cfg).unwrap());
        assert_ne!(class_caption(0, &cfg).unwrap(), class_caption(1, &cfg).unwrap());
        assert!(class_caption(5, &cfg).is_err());
    }

    #[test]
    fn sixty_two_captions_are_distinct() {
        let cfg = DatasetConfig::default();
        let caps = class_captions(&cfg);
        assert_eq!(caps.len(), 62);
        let mut worst: f64 = -1.0;
        for i in 0..caps.len() {
            for j in i + 1..caps.len() {
                worst = worst.max(cosine_similarity(caps[i].data(), caps[j].data()).unwrap());
            }
        }
        assert!(worst < 0.99, "max pairwise cosine {worst}");
    }

    #[test]
    fn zero_shift_is_identity_transform() {
        let cfg = DatasetConfig { domain_shift_strength: 0.0, ..small() };
        for d in 0..6 {
            assert!(domain_transform(&cfg, d).is_identity());
        }
        assert!(!domain_transform(&small(), 0).is_identity());
    }

    #[test]
    fn transforms_preserve_norm_up_to_translation() {
        let cfg = small();
        let t = domain_transform(&cfg, 1);
        let rot_only = DomainTransform { rotations: t.rotations.clone(), translation: vec![0.0; 6] };
        let mut x = vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0];
        let n0 = crate::numerics::norm(&x);
        rot_only.apply(&mut x);
        assert!((crate::numerics::norm(&x) - n0).abs() < 1e-12);
    }

    #[test]
    fn nearest_prototype_oracle_is_perfect_without_noise() {
        let cfg = DatasetConfig {
            num_classes: 2,
            noise_std: 0.0,
            class_separation: 20.0,
            ..small()
        };
        let b = generate_dataset(&cfg).unwrap();
        // prototypes per (class, domain) estimated from training data
        let mut protos: Vec<(usize, usize, Vec<f64>, usize)> = Vec::new();
        for s in &b.train {
            match protos.iter_mut().find(|p| p.0 == s.label && p.1 == s.domain_id) {
                Some(p) => {
                    p.2.iter_mut().zip(s.image_vector.data()).for_each(|(a, x)| *a += x);
                    p.3 += 1;
                }
                None => protos.push((s.label, s.domain_id, s.image_vector.data().to_vec(), 1)),
            }
        }
        for p in &mut protos {
            let n = p.3 as f64;
            p.2.iter_mut().for_each(|a| *a /= n);
        }
        let correct = b
            .id_test
            .iter()
            .filter(|s| {
                let best = protos
                    .iter()
                    .min_by(|a, c| {
                        let da: f64 = a.2.iter().zip(s.image_vector.data()).map(|(x, y)| (x - y).powi(2)).sum();
                        let dc: f64 = c.2.iter().zip(s.image_vector.data()).map(|(x, y)| (x - y).powi(2)).sum();
                        da.total_cmp(&dc)
                    })
                    .unwrap();
                best.0 == s.label
            })
            .count();
        assert_eq!(correct, b.id_test.len());
    }

    #[test]
    fn imbalance_and_label_noise() {
        let cfg = DatasetConfig { class_imbalance: 0.3, ..small() };
        let b = generate_dataset(&cfg).unwrap();
        let count = |c| b.ood_test.iter().filter(|s| s.label == c).count();
        assert!(count(0) > count(4));
        let noisy = generate_dataset(&DatasetConfig { label_noise: 1.0, ..small() }).unwrap();
        let clean = generate_dataset(&small()).unwrap();
        let changed = noisy.train.iter().zip(&clean.train).filter(|(a, b)| a.label != b.label).count();
        assert!(changed > 0);
        assert_eq!(noisy.ood_test, clean.ood_test);
    }

    #[test]
    fn pretext_domains_are_disjoint_from_task() {
        let cfg = small();
        let pool = pretext_pool(&cfg, 3, 4, 5).unwrap();
        assert_eq!(pool.len(), 3 * 5 * 4);
        assert!(pool.iter().all(|s| s.domain_id >= cfg.first_free_domain()));
        let partial = pretext_pool(&cfg, 3, 4, 2).unwrap();
        assert_eq!(partial.len(), 3 * 2 * 4);
        assert!(partial.iter().all(|s| s.label < 2));
        assert!(pretext_pool(&cfg, 3, 4, 0).is_err());
        assert!(pretext_pool(&cfg, 3, 4, 6).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_dataset(&DatasetConfig { num_classes: 1, ..small() }).is_err());
        assert!(generate_dataset(&DatasetConfig { domain_shift_strength: -1.0, ..small() }).is_err());
        assert!(generate_dataset(&DatasetConfig { num_ood_domains: 0, ..small() }).is_err());
    }
}
