use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::resize;
use crate::semantics::backbone::TokenBackbone;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    L,
    M,
    H,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L, Level::M, Level::H];

    /// 1-based transformer layer.
    pub fn layer(self) -> usize {
        match self {
            Level::L => 3,
            Level::M => 6,
            Level::H => 12,
        }
    }

    pub fn from_layer(layer: usize) -> Result<Self> {
        Level::ALL
            .into_iter()
            .find(|l| l.layer() == layer)
            .ok_or_else(|| Error::invalid(format!("unknown level for layer {layer}; expected 3, 6 or 12")))
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Level::L => "L",
            Level::M => "M",
            Level::H => "H",
        };
        f.write_str(s)
    }
}

impl FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "L" | "l" => Ok(Level::L),
            "M" | "m" => Ok(Level::M),
            "H" | "h" => Ok(Level::H),
            other => other
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("unknown level `{other}`")))
                .and_then(Level::from_layer),
        }
    }
}

/// Per-channel statistics of the backbone's training data, applied to
/// `[0, 1]` pixel values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for ImageNorm {
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl ImageNorm {
    /// Map `[-1, 1]` images to normalized backbone input.
    pub fn apply(&self, images: &Tensor) -> Result<Tensor> {
        let dev = images.device();
        let dt = images.dtype();
        let scale: Vec<f64> = self.std.iter().map(|s| 0.5 / s).collect();
        let shift: Vec<f64> = self.mean.iter().zip(&self.std).map(|(m, s)| (0.5 - m) / s).collect();
        let scale = Tensor::new(scale.as_slice(), dev)?.to_dtype(dt)?.reshape((1, 3, 1, 1))?;
        let shift = Tensor::new(shift.as_slice(), dev)?.to_dtype(dt)?.reshape((1, 3, 1, 1))?;
        Ok(images.broadcast_mul(&scale)?.broadcast_add(&shift)?)
    }
}

/// Patch tokens of one image at one level.
#[derive(Debug, Clone)]
pub struct TokenMatrix {
    /// `[n_patches, d]`.
    pub tokens: Tensor,
    pub level: Level,
    pub source_resolution: usize,
}

/// A backbone plus its input preprocessing.
pub struct Encoder {
    backbone: Box<dyn TokenBackbone>,
    norm: ImageNorm,
}

impl Encoder {
    pub fn new(backbone: Box<dyn TokenBackbone>, norm: ImageNorm) -> Self {
        Self { backbone, norm }
    }

    pub fn backbone(&self) -> &dyn TokenBackbone {
        self.backbone.as_ref()
    }

    pub fn norm(&self) -> &ImageNorm {
        &self.norm
    }

    fn prepare(&self, images: &Tensor) -> Result<Tensor> {
        let r = self.backbone.input_resolution();
        self.norm.apply(&resize(images, r)?)
    }

    /// Tokens `[N, n_patches, d]` per requested level.
    pub fn encode(&self, images: &Tensor, levels: &[Level]) -> Result<BTreeMap<Level, Tensor>> {
        for l in levels {
            if l.layer() > self.backbone.depth() {
                return Err(Error::invalid(format!(
                    "level {l} needs layer {} but the backbone has {}",
                    l.layer(),
                    self.backbone.depth()
                )));
            }
        }
        let x = self.prepare(images)?;
        let layers: Vec<usize> = levels.iter().map(|l| l.layer()).collect();
        let outs = self.backbone.forward_layers(&x, &layers)?;
        Ok(levels.iter().copied().zip(outs).collect())
    }

    /// Token matrix of the first image of `image` (`[1, 3, H, W]` or `[3, H, W]`).
    pub fn extract_tokens(&self, image: &Tensor, level: Level) -> Result<TokenMatrix> {
        let image = if image.rank() == 3 { image.unsqueeze(0)? } else { image.narrow(0, 0, 1)? };
        let mut out = self.encode(&image, &[level])?;
        let tokens = out.remove(&level).expect("requested level").squeeze(0)?;
        Ok(TokenMatrix {
            tokens,
            level,
            source_resolution: self.backbone.input_resolution(),
        })
    }
}
