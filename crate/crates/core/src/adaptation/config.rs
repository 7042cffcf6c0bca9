use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::discriminator::DiscriminatorConfig;
use crate::backends::{PerceptualConfig, SemanticsConfig};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, InversionConfig};
use crate::objectives::LossWeights;
use crate::semantics::Level;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr_generator: f64,
    pub lr_tps_stn: f64,
    pub lr_basic_stn: f64,
    pub lr_discriminator: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub truncation: f64,
    /// 1-based first row taken from the reference code.
    pub style_mix_split: usize,
    pub temperature: f64,
    pub consistency_level: Level,
    pub direction_levels: Vec<Level>,
    pub log_every: usize,
    /// Steps between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub inversion: InversionConfig,
    pub semantics: SemanticsConfig,
    pub perceptual: PerceptualConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            iterations: 600,
            lr_generator: 0.002,
            lr_tps_stn: 5e-6,
            lr_basic_stn: 1e-4,
            lr_discriminator: 0.002,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weights: LossWeights::default(),
            seed: 0,
            truncation: 0.7,
            style_mix_split: 9,
            temperature: 1.0,
            consistency_level: Level::M,
            direction_levels: vec![Level::M, Level::H],
            log_every: 10,
            checkpoint_every: 100,
            generator: GeneratorConfig::mini(),
            discriminator: DiscriminatorConfig::mini(),
            inversion: InversionConfig::default(),
            semantics: SemanticsConfig::default(),
            perceptual: PerceptualConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2 to form generated pairs, got {}",
                self.batch_size
            )));
        }
        for (name, v) in [
            ("lr_generator", self.lr_generator),
            ("lr_tps_stn", self.lr_tps_stn),
            ("lr_basic_stn", self.lr_basic_stn),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.truncation > 0.0 && self.truncation <= 1.0) {
            return Err(Error::Config(format!("truncation {} outside (0, 1]", self.truncation)));
        }
        if !(1..=crate::generator::LATENT_ROWS).contains(&self.style_mix_split) {
            return Err(Error::Config(format!("style_mix_split {} outside 1..=18", self.style_mix_split)));
        }
        if self.direction_levels.is_empty() {
            return Err(Error::Config("direction_levels is empty".into()));
        }
        if self.discriminator.resolution != self.generator.output_resolution {
            return Err(Error::Config(format!(
                "discriminator resolution {} differs from generator output {}",
                self.discriminator.resolution, self.generator.output_resolution
            )));
        }
        self.weights.validate()?;
        self.generator.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Short stable hash of the canonical serialized form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes()))[..12].to_string())
    }
}
