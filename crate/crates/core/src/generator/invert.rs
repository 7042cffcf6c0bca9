//! Optimization-based GAN inversion into W+.

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::backends::PerceptualNet;
use crate::error::{Error, Result};
use crate::generator::latent::LatentCode;
use crate::generator::model::Generator;
use crate::generator::transform::Deform;
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub steps: usize,
    pub l1_weight: f64,
    pub perceptual_weight: f64,
    pub lr: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            l1_weight: 1.0,
            perceptual_weight: 0.8,
            lr: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    /// Best iterate.
    pub latent: LatentCode,
    pub initial_loss: f64,
    pub best_loss: f64,
    /// Loss at every evaluated iterate, starting with the mean latent.
    pub losses: Vec<f64>,
}

impl InversionResult {
    /// Running minimum of `losses`.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.losses
            .iter()
            .map(|&l| {
                best = best.min(l);
                best
            })
            .collect()
    }
}

fn reconstruction_loss(
    generator: &Generator,
    perceptual: &dyn PerceptualNet,
    ws: &Tensor,
    target: &Tensor,
    cfg: &InversionConfig,
) -> Result<Tensor> {
    let img = generator.synthesize_batch(ws, Deform::Off)?;
    let l1 = (&img - target)?.abs()?.mean_all()?;
    let lp = perceptual.distance(&img, target)?.mean_all()?;
    Ok((l1.affine(cfg.l1_weight, 0.0)? + lp.affine(cfg.perceptual_weight, 0.0)?)?)
}

/// Find a latent of the frozen `generator` that reproduces `image`
/// (`[1, 3, R, R]`), starting from the mean latent.
pub fn invert_reference(
    image: &Tensor,
    generator: &Generator,
    perceptual: &dyn PerceptualNet,
    cfg: &InversionConfig,
) -> Result<InversionResult> {
    let r = generator.config().output_resolution;
    let (n, c, h, w) = image.dims4()?;
    if n != 1 || c != 3 || h != r || w != r {
        return Err(Error::shape(format!(
            "inversion target must be [1, 3, {r}, {r}], got {:?}",
            image.dims()
        )));
    }
    let target = image.to_dtype(generator.dtype())?.detach();
    let start = LatentCode::broadcast(&generator.mean_latent()?)?;
    let var = Var::from_tensor(&start.tensor().unsqueeze(0)?)?;
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let mut best = (f64::INFINITY, start.clone());
    for step in 0..=cfg.steps {
        let loss = reconstruction_loss(generator, perceptual, var.as_tensor(), &target, cfg)?;
        let value = crate::nn::scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                term: "inversion",
                value,
            });
        }
        losses.push(value);
        if value < best.0 {
            best = (value, LatentCode::new(var.as_tensor().squeeze(0)?.detach().copy()?)?);
        }
        if step < cfg.steps {
            let grads = loss.backward()?;
            opt.step([("w", &var)], &grads)?;
        }
    }
    let initial_loss = losses[0];
    let last = *losses.last().unwrap_or(&initial_loss);
    if last > initial_loss {
        log::warn!("inversion did not converge: final loss {last:.4} > initial {initial_loss:.4}; returning best iterate");
    }
    Ok(InversionResult {
        latent: best.1,
        initial_loss,
        best_loss: best.0,
        losses,
    })
}
