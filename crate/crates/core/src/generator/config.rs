use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warp::{DEFAULT_CONV_CHANNELS, DEFAULT_GRID_SIZE, DEFAULT_HIDDEN};

/// Rows of every latent code, independent of how many the synthesis network reads.
pub const LATENT_ROWS: usize = 18;
pub const LATENT_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub output_resolution: usize,
    pub transform_resolutions: BTreeSet<usize>,
    pub grid_size: usize,
    /// safetensors file in the community StyleGAN2 layout; ignored in mini mode.
    pub checkpoint: Option<PathBuf>,
    pub mini_mode: bool,
    /// Seed for randomly initialized weights (mini generator, fresh Transforms).
    pub seed: u64,
    pub mapping_layers: usize,
    pub channel_base: usize,
    pub channel_max: usize,
    pub conv_clamp: Option<f64>,
    pub predictor_channels: usize,
    pub predictor_hidden: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::mini()
    }
}

impl GeneratorConfig {
    /// Randomly initialized 64×64 generator with the full block structure.
    pub fn mini() -> Self {
        Self {
            output_resolution: 64,
            transform_resolutions: [32, 64].into_iter().collect(),
            grid_size: DEFAULT_GRID_SIZE,
            checkpoint: None,
            mini_mode: true,
            seed: 0,
            mapping_layers: 2,
            channel_base: 1024,
            channel_max: 64,
            conv_clamp: None,
            predictor_channels: DEFAULT_CONV_CHANNELS,
            predictor_hidden: DEFAULT_HIDDEN,
        }
    }

    /// 1024×1024 FFHQ config-f generator loaded from `checkpoint`.
    pub fn ffhq(checkpoint: impl Into<PathBuf>) -> Self {
        Self {
            output_resolution: 1024,
            checkpoint: Some(checkpoint.into()),
            mini_mode: false,
            mapping_layers: 8,
            channel_base: 32768,
            channel_max: 512,
            ..Self::mini()
        }
    }

    pub fn channels(&self, res: usize) -> usize {
        (self.channel_base / res).min(self.channel_max)
    }

    /// Synthesis block resolutions, 4 up to the output.
    pub fn resolutions(&self) -> Vec<usize> {
        let mut v = Vec::new();
        let mut r = 4;
        while r <= self.output_resolution {
            v.push(r);
            r *= 2;
        }
        v
    }

    /// Latent rows read by the synthesis network.
    pub fn num_ws(&self) -> usize {
        2 * self.output_resolution.trailing_zeros() as usize - 2
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.output_resolution;
        if r < 8 || !r.is_power_of_two() {
            return Err(Error::Config(format!("output_resolution {r} must be a power of two >= 8")));
        }
        if self.num_ws() > LATENT_ROWS {
            return Err(Error::Config(format!("resolution {r} needs more than {LATENT_ROWS} latent rows")));
        }
        if self.grid_size < 2 {
            return Err(Error::Config(format!("grid_size must be >= 2, got {}", self.grid_size)));
        }
        let res = self.resolutions();
        for &t in &self.transform_resolutions {
            if !res.contains(&t) || t < 8 {
                return Err(Error::Config(format!(
                    "transform resolution {t} is not a synthesis resolution in 8..={r}"
                )));
            }
            if t < self.grid_size {
                return Err(Error::Config(format!(
                    "transform resolution {t} is smaller than the {0}x{0} control grid",
                    self.grid_size
                )));
            }
        }
        if self.mapping_layers == 0 || self.channel_max == 0 {
            return Err(Error::Config("mapping_layers and channel_max must be positive".into()));
        }
        if !self.mini_mode && self.checkpoint.is_none() {
            return Err(Error::Config("a checkpoint is required outside mini mode".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_row_counts() {
        assert_eq!(GeneratorConfig::mini().num_ws(), 10);
        assert_eq!(GeneratorConfig::ffhq("x").num_ws(), 18);
    }

    #[test]
    fn channel_tables() {
        let m = GeneratorConfig::mini();
        let c: Vec<_> = m.resolutions().iter().map(|&r| m.channels(r)).collect();
        assert_eq!(c, vec![64, 64, 64, 32, 16]);
        let f = GeneratorConfig::ffhq("x");
        assert_eq!(f.channels(64), 512);
        assert_eq!(f.channels(1024), 32);
    }

    #[test]
    fn rejects_bad_transform_resolution() {
        let mut c = GeneratorConfig::mini();
        c.transform_resolutions.insert(128);
        assert!(c.validate().is_err());
        let mut c = GeneratorConfig::mini();
        c.grid_size = 1;
        assert!(c.validate().is_err());
    }
}
