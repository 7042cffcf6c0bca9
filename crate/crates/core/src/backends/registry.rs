//! Declarative backend selection and checkpoint path resolution.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};

use crate::backends::identity::{ArcFace, IResNetConfig, IdentityNet, StubIdentity};
use crate::backends::perceptual::{PerceptualNet, StubPerceptual, VggLpips};
use crate::error::Result;
use crate::semantics::{Encoder, ImageNorm, StubBackbone, VitBackbone, VitConfig};

/// Directory that relative checkpoint paths are resolved against.
pub const CACHE_ENV: &str = "WARPSTYLE_CACHE";

pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

/// Absolute paths are kept; relative ones are looked up in the cache
/// directory first, then taken as given.
pub fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    if let Some(dir) = cache_dir() {
        let candidate = dir.join(path);
        if candidate.exists() {
            return candidate;
        }
    }
    path.to_path_buf()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneConfig {
    Stub {
        seed: u64,
        resolution: usize,
        patch: usize,
        dim: usize,
    },
    Vit {
        checkpoint: PathBuf,
        #[serde(flatten)]
        vit: VitConfig,
    },
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig::Stub {
            seed: 0,
            resolution: 64,
            patch: 8,
            dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticsConfig {
    pub backbone: BackboneConfig,
    pub norm: ImageNorm,
}

impl Default for SemanticsConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            norm: ImageNorm::default(),
        }
    }
}

impl SemanticsConfig {
    pub fn build(&self, dtype: DType, device: &Device) -> Result<Encoder> {
        let backbone: Box<dyn crate::semantics::TokenBackbone> = match &self.backbone {
            BackboneConfig::Stub {
                seed,
                resolution,
                patch,
                dim,
            } => Box::new(StubBackbone::new(*seed, *resolution, *patch, *dim, dtype, device)?),
            BackboneConfig::Vit { checkpoint, vit } => {
                Box::new(VitBackbone::load(&resolve_checkpoint(checkpoint), vit.clone(), dtype, device)?)
            }
        };
        Ok(Encoder::new(backbone, self.norm.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerceptualConfig {
    Stub { seed: u64 },
    Vgg { checkpoint: PathBuf, resolution: Option<usize> },
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        PerceptualConfig::Stub { seed: 0 }
    }
}

impl PerceptualConfig {
    pub fn build(&self, dtype: DType, device: &Device) -> Result<Box<dyn PerceptualNet>> {
        Ok(match self {
            PerceptualConfig::Stub { seed } => Box::new(StubPerceptual::new(*seed, dtype, device)?),
            PerceptualConfig::Vgg { checkpoint, resolution } => {
                Box::new(VggLpips::load(&resolve_checkpoint(checkpoint), *resolution, dtype, device)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IdentityConfig {
    Stub { seed: u64 },
    Arcface { checkpoint: PathBuf },
}

impl Default for IdentityConfig {
    fn default() -> Self {
        IdentityConfig::Stub { seed: 0 }
    }
}

impl IdentityConfig {
    pub fn build(&self, dtype: DType, device: &Device) -> Result<Box<dyn IdentityNet>> {
        Ok(match self {
            IdentityConfig::Stub { seed } => Box::new(StubIdentity::new(*seed, dtype, device)?),
            IdentityConfig::Arcface { checkpoint } => Box::new(ArcFace::load(
                &resolve_checkpoint(checkpoint),
                IResNetConfig::r50(),
                dtype,
                device,
            )?),
        })
    }
}
