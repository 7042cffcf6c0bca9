use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::warp::sample::{affine_grid, grid_sample};

/// Global translation / rotation / scale. The sampling grid is
/// `θ · [x, y, 1]ᵀ` with `θ = [R(rotation)·diag(scale) | translation]`, so the
/// map itself is moved by the inverse transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub translation: [f64; 2],
    pub rotation: f64,
    pub scale: [f64; 2],
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            translation: [0.0, 0.0],
            rotation: 0.0,
            scale: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.translation.iter().chain(&self.scale).all(|v| v.is_finite())
            && self.rotation.is_finite();
        if !finite {
            return Err(Error::invalid("affine parameters must be finite"));
        }
        if self.scale.iter().any(|s| *s <= 0.0) {
            return Err(Error::invalid(format!(
                "scale components must be positive, got {:?}",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn theta(&self) -> [[f64; 3]; 2] {
        let (s, c) = self.rotation.sin_cos();
        let [sx, sy] = self.scale;
        let [tx, ty] = self.translation;
        [[sx * c, -sy * s, tx], [sx * s, sy * c, ty]]
    }

    pub fn theta_tensor(&self, device: &Device) -> Result<Tensor> {
        let t = self.theta();
        let flat: Vec<f64> = t.iter().flatten().copied().collect();
        Ok(Tensor::from_vec(flat, (1, 2, 3), device)?)
    }

    /// Inverse of [`theta_from_raw`] for a single row.
    pub fn from_raw(raw: [f64; 5]) -> Self {
        Self {
            translation: [raw[0], raw[1]],
            rotation: raw[2],
            scale: [raw[3].exp(), raw[4].exp()],
        }
    }
}

/// Build `θ` (`[N, 2, 3]`) from raw predictor outputs `[N, 5]` laid out as
/// `(tx, ty, rotation, log sx, log sy)`. A zero row is the identity.
pub fn theta_from_raw(raw: &Tensor) -> Result<Tensor> {
    let (n, k) = raw.dims2()?;
    if k != 5 {
        return Err(Error::shape(format!("affine head must emit 5 values, got {k}")));
    }
    let col = |i: usize| raw.narrow(1, i, 1);
    let (tx, ty, rot) = (col(0)?, col(1)?, col(2)?);
    let sx = col(3)?.exp()?;
    let sy = col(4)?.exp()?;
    let (cos, sin) = (rot.cos()?, rot.sin()?);
    let row0 = Tensor::cat(&[(&sx * &cos)?, (&sy * &sin)?.neg()?, tx], 1)?;
    let row1 = Tensor::cat(&[(&sx * &sin)?, (&sy * &cos)?, ty], 1)?;
    Ok(Tensor::stack(&[row0, row1], 1)?.reshape((n, 2, 3))?)
}

/// Resample `features` (`[N, C, H, W]` or `[C, H, W]`) under per-sample `θ`.
pub fn affine_warp_theta(features: &Tensor, theta: &Tensor) -> Result<Tensor> {
    let squeeze = features.rank() == 3;
    let x = if squeeze {
        features.unsqueeze(0)?
    } else {
        features.clone()
    };
    let (n, _, h, w) = x.dims4()?;
    let theta = theta.to_dtype(x.dtype())?;
    let theta = if theta.dim(0)? == n {
        theta
    } else {
        theta.broadcast_as((n, 2, 3))?.contiguous()?
    };
    let grid = affine_grid(&theta, h, w)?;
    let out = grid_sample(&x, &grid)?;
    Ok(if squeeze { out.squeeze(0)? } else { out })
}

pub fn affine_warp(features: &Tensor, params: &AffineParams) -> Result<Tensor> {
    params.validate()?;
    let theta = params.theta_tensor(features.device())?;
    affine_warp_theta(features, &theta)
}
