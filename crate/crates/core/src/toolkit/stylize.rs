use candle_core::Tensor;

use crate::backends::PerceptualNet;
use crate::error::{Error, Result};
use crate::generator::{invert_reference, Deform, Generator, InversionConfig, LatentCode};
use crate::toolkit::bundle::Bundle;

/// Maps a real image to a W+ code of the source generator.
pub trait ImageEncoder {
    fn name(&self) -> &str;
    fn encode(&self, image: &Tensor, source: &Generator) -> Result<LatentCode>;
}

/// Encoder fallback: optimization-based inversion.
pub struct InversionEncoder {
    pub perceptual: Box<dyn PerceptualNet>,
    pub config: InversionConfig,
}

impl ImageEncoder for InversionEncoder {
    fn name(&self) -> &str {
        "inversion"
    }

    fn encode(&self, image: &Tensor, source: &Generator) -> Result<LatentCode> {
        Ok(invert_reference(image, source, self.perceptual.as_ref(), &self.config)?.latent)
    }
}

pub enum StylizeInput<'a> {
    Seed(u64),
    Latent(LatentCode),
    Image(&'a Tensor),
}

/// Resolve the input to a latent code. Seeds use the bundle's truncation.
pub fn resolve_latent(bundle: &Bundle, input: StylizeInput<'_>, encoder: Option<&dyn ImageEncoder>) -> Result<LatentCode> {
    match input {
        StylizeInput::Seed(seed) => bundle.generator().sample_latent(seed, bundle.config().truncation),
        StylizeInput::Latent(w) => Ok(w),
        StylizeInput::Image(img) => {
            let encoder = encoder.ok_or_else(|| {
                Error::MissingBackend("no image encoder is available and inversion is disabled".into())
            })?;
            let source = bundle.source_generator()?;
            encoder.encode(img, &source)
        }
    }
}

/// `G_t(w)` with deformation strength `alpha`.
pub fn stylize(bundle: &Bundle, w: &LatentCode, alpha: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    bundle.generator().synthesize(w, Deform::Alpha(alpha))
}

#[derive(Debug, Clone)]
pub struct SweepFrame {
    pub alpha: f64,
    pub image: Tensor,
    /// RMS displacement of each Transform's effective field, in resolution order.
    pub displacement_norms: Vec<f64>,
}

pub fn alpha_sweep(generator: &Generator, w: &LatentCode, alphas: &[f64]) -> Result<Vec<SweepFrame>> {
    let ws = w.tensor().unsqueeze(0)?;
    alphas
        .iter()
        .map(|&alpha| {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
            }
            let out = generator.forward(&ws, Deform::Alpha(alpha))?;
            let mut norms = Vec::new();
            for t in &out.transforms {
                norms.push(t.field.displacement_norms()?[0]);
            }
            if out.transforms.is_empty() {
                norms = vec![0.0; generator.config().transform_resolutions.len()];
            }
            Ok(SweepFrame {
                alpha,
                image: out.image,
                displacement_norms: norms,
            })
        })
        .collect()
}

/// `n` evenly spaced values from 0 to 1.
pub fn alpha_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}
