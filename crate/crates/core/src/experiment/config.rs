use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetConfig;
use crate::error::{Error, Result};
use crate::models::{Activation, DualEncoderSpec, EncoderSpec};
use crate::rng::derive_seed;
use crate::train::WarmupMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    VisionLinearProbe,
    VisionE2e,
    ClipLinearProbe,
    ClipE2e,
    ClipE2eSwa,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::VisionLinearProbe, Variant::VisionE2e, Variant::ClipLinearProbe, Variant::ClipE2e, Variant::ClipE2eSwa];

    pub fn name(self) -> &'static str {
        match self {
            Variant::VisionLinearProbe => "vision_linear_probe",
            Variant::VisionE2e => "vision_e2e",
            Variant::ClipLinearProbe => "clip_linear_probe",
            Variant::ClipE2e => "clip_e2e",
            Variant::ClipE2eSwa => "clip_e2e_swa",
        }
    }

    /// Starts from the CLIP model (its image tower, for the linear probe).
    pub fn is_clip(self) -> bool {
        matches!(self, Variant::ClipLinearProbe | Variant::ClipE2e | Variant::ClipE2eSwa)
    }

    /// Trains the dual encoder with InfoNCE and classifies over class captions.
    /// The other variants train a cross-entropy head.
    pub fn is_contrastive(self) -> bool {
        matches!(self, Variant::ClipE2e | Variant::ClipE2eSwa)
    }

    pub fn is_linear_probe(self) -> bool {
        matches!(self, Variant::VisionLinearProbe | Variant::ClipLinearProbe)
    }

    pub fn uses_swa(self) -> bool {
        self == Variant::ClipE2eSwa
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Top1,
    MacroF1,
}

/// Encoder widths shared by the vision classifier and both CLIP towers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub activation: Activation,
    pub temperature: f64,
    pub learn_temperature: bool,
    pub momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64],
            feature_dim: 32,
            embed_dim: 32,
            activation: Activation::Tanh,
            temperature: 0.1,
            learn_temperature: false,
            momentum: 0.9,
        }
    }
}

/// Where the zero-shot CLIP model comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroShotInit {
    #[default]
    Pretrained,
    Random,
}

/// Contrastive pretraining of the CLIP model on domains outside the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub enabled: bool,
    pub num_domains: usize,
    pub samples_per_class_per_domain: usize,
    /// Share of the task's classes present in the pretext pool, counted from class 0.
    pub class_coverage: f64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl PretrainConfig {
    pub fn classes_covered(&self, num_classes: usize) -> usize {
        ((self.class_coverage * num_classes as f64).round() as usize).min(num_classes)
    }
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            num_domains: 12,
            samples_per_class_per_domain: 10,
            class_coverage: 0.5,
            epochs: 40,
            lr: 0.05,
            weight_decay: 1e-4,
            batch_size: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variants: Vec<Variant>,
    pub fractions: Vec<f64>,
    pub lr_grid: Vec<f64>,
    pub weight_decay_grid: Vec<f64>,
    pub epochs: usize,
    pub seeds: usize,
    pub batch_size: usize,
    pub swa_epochs: usize,
    pub eta_min_ratio: f64,
    pub warmup_epochs: usize,
    pub warmup: WarmupMode,
    pub metric: Metric,
    pub workers: usize,
    pub zero_shot_init: ZeroShotInit,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            fractions: vec![0.0, 0.03, 0.05, 0.10, 0.30, 0.50, 0.70, 0.90, 1.0],
            lr_grid: vec![1e-2, 1e-3, 1e-4, 1e-5],
            weight_decay_grid: vec![1e-1, 1e-2, 1e-3, 1e-4],
            epochs: 20,
            seeds: 3,
            batch_size: 128,
            swa_epochs: 10,
            eta_min_ratio: 0.1,
            warmup_epochs: 5,
            warmup: WarmupMode::Auto,
            metric: Metric::Top1,
            workers: 1,
            zero_shot_init: ZeroShotInit::Pretrained,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
        }
    }
}

const SEED_IMAGE: u64 = 0x1313;
const SEED_TEXT: u64 = 0x7e77;

impl ExperimentConfig {
    /// Reads a TOML document, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.variants.is_empty() {
            return Err(Error::config("at least one variant is required"));
        }
        let mut seen = self.variants.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.variants.len() {
            return Err(Error::config("variants must be unique"));
        }
        if self.fractions.is_empty()
            || self.fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || self.fractions.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::config("fractions must be strictly ascending within [0, 1]"));
        }
        let positive = |grid: &[f64]| !grid.is_empty() && grid.iter().all(|v| *v > 0.0 && v.is_finite());
        if !positive(&self.lr_grid) {
            return Err(Error::config("lr_grid must be non-empty and positive"));
        }
        if self.weight_decay_grid.is_empty() || self.weight_decay_grid.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::config("weight_decay_grid must be non-empty and non-negative"));
        }
        if self.seeds == 0 || self.epochs == 0 || self.batch_size == 0 || self.workers == 0 {
            return Err(Error::config("seeds, epochs, batch_size and workers must be >= 1"));
        }
        if self.swa_epochs > self.epochs {
            return Err(Error::config(format!("swa_epochs ({}) exceeds epochs ({})", self.swa_epochs, self.epochs)));
        }
        if self.model.feature_dim == 0 || self.model.embed_dim == 0 || self.model.hidden_dims.contains(&0) {
            return Err(Error::config("model dims must be >= 1"));
        }
        if !(self.model.temperature > 0.0) {
            return Err(Error::config("temperature must be > 0"));
        }
        if self.pretrain.enabled
            && (self.pretrain.num_domains == 0 || self.pretrain.epochs == 0 || self.pretrain.batch_size == 0)
        {
            return Err(Error::config("pretraining needs domains, epochs and batch_size >= 1"));
        }
        if self.pretrain.enabled && self.pretrain.classes_covered(self.dataset.num_classes) == 0 {
            return Err(Error::config("pretrain.class_coverage must leave at least one class"));
        }
        Ok(())
    }

    /// Identifies everything that influences a single run apart from its key
    /// (variant, fraction, lr, weight decay, seed).
    pub fn config_hash(&self) -> String {
        let canonical = Self {
            variants: Vec::new(),
            fractions: Vec::new(),
            lr_grid: Vec::new(),
            weight_decay_grid: Vec::new(),
            seeds: 0,
            metric: Metric::Top1,
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn image_encoder_spec(&self, seed: u64) -> EncoderSpec {
        EncoderSpec {
            input_dim: self.dataset.input_dim,
            hidden_dims: self.model.hidden_dims.clone(),
            output_dim: self.model.feature_dim,
            activation: self.model.activation,
            seed: derive_seed(seed, &[SEED_IMAGE]),
        }
    }

    pub fn dual_encoder_spec(&self, seed: u64) -> DualEncoderSpec {
        DualEncoderSpec {
            image: self.image_encoder_spec(seed),
            text: EncoderSpec {
                input_dim: self.dataset.text_dim,
                hidden_dims: self.model.hidden_dims.clone(),
                output_dim: self.model.feature_dim,
                activation: self.model.activation,
                seed: derive_seed(seed, &[SEED_TEXT]),
            },
            embed_dim: self.model.embed_dim,
            temperature: self.model.temperature,
            learn_temperature: self.model.learn_temperature,
        }
    }
}
