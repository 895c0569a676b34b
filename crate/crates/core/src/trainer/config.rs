use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bank::DEFAULT_CAPACITY;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::imaging::AugmentSpec;
use crate::nn::AdamConfig;
use crate::objectives::LossWeights;

/// Ablation and fidelity switches. All default to off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Drop both discriminators and the adversarial term.
    pub no_de: bool,
    /// One discriminator shared by both domains.
    pub mix_de: bool,
    /// Keep only the artistic discriminator and skip the `I_sc` branch.
    pub one_de: bool,
    /// Keep only the realistic reconstruction term of the cycle loss.
    pub half_cycle: bool,
    /// Replace the generator contrastive loss with the Gram-matrix loss.
    pub gram_substitute: bool,
    /// Let generator-side losses update the style projector too.
    pub joint_msp_grad: bool,
    /// Use two augmented views as the projector's positive pair instead of
    /// (center crop, augmented view).
    pub aug_aug_positive: bool,
    /// Non-saturating `−log D(fake)` generator loss instead of the literal
    /// `log(1 − D(fake))`.
    pub non_saturating_generator: bool,
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        if self.no_de && (self.mix_de || self.one_de) {
            return Err(Error::Config("no_de cannot be combined with mix_de or one_de".into()));
        }
        if self.mix_de && self.one_de {
            return Err(Error::Config("mix_de and one_de are mutually exclusive".into()));
        }
        Ok(())
    }

    /// Whether the `I_sc = G(I_s, I_c)` branch is generated.
    pub fn uses_reverse_branch(&self) -> bool {
        !self.one_de
    }

    pub fn uses_full_cycle(&self) -> bool {
        !(self.half_cycle || self.one_de)
    }
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch: usize,
    /// Initial learning rate, decayed linearly to zero over `iterations`.
    pub lr: f64,
    /// Discriminator learning rate as a multiple of `lr`.
    pub d_lr_scale: f64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub image_size: usize,
    pub flags: AblationFlags,
    /// Steps at the start that update only the style projector.
    pub msp_pretrain_steps: u64,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Sample stylization cadence in steps; 0 disables samples.
    pub sample_every: u64,
    pub bank_capacity: usize,
    /// Augmentation for the projector's positive pairs; derived from
    /// `image_size` when absent.
    pub augment: Option<AugmentSpec>,
    pub seed: u64,
    pub model: ModelConfig,
    /// Pretrained backbone archive; seeded random weights when absent.
    pub backbone_weights: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 800_000,
            batch: 4,
            lr: 1e-4,
            d_lr_scale: 1.0,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            image_size: 256,
            flags: AblationFlags::default(),
            msp_pretrain_steps: 0,
            checkpoint_every: 10_000,
            sample_every: 0,
            bank_capacity: DEFAULT_CAPACITY,
            augment: None,
            seed: 0,
            model: ModelConfig::full(),
            backbone_weights: None,
        }
    }
}

impl TrainConfig {
    /// Narrow networks at 64×64, sized for a CPU.
    pub fn desk(iterations: u64) -> Self {
        Self {
            iterations,
            image_size: 64,
            checkpoint_every: 0,
            model: ModelConfig::desk(),
            ..Self::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn augment_spec(&self) -> AugmentSpec {
        self.augment.unwrap_or_else(|| AugmentSpec::for_size(self.image_size))
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.d_lr_scale > 0.0 && self.d_lr_scale.is_finite()) {
            return Err(Error::Config(format!("d_lr_scale must be positive, got {}", self.d_lr_scale)));
        }
        if self.image_size % 8 != 0 || self.image_size < 64 {
            return Err(Error::Config(format!(
                "image size must be a multiple of 8 and at least 64, got {}",
                self.image_size
            )));
        }
        if self.bank_capacity == 0 {
            return Err(Error::Config("bank capacity must be positive".into()));
        }
        self.flags.validate()?;
        self.weights.validate()?;
        self.model.validate()?;
        let aug = self.augment_spec();
        aug.validate()?;
        if aug.crop % 8 != 0 {
            return Err(Error::Config(format!("augmentation crop {} must be a multiple of 8", aug.crop)));
        }
        Ok(())
    }

    /// `lr₀ · (1 − t / iterations)`.
    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr * (1.0 - step as f64 / self.iterations as f64)
    }
}
