//! The Transform plug-in: a basic STN (translation, rotation, scale) followed
//! by a TPS-STN, both predicted from the block output. The two warps are
//! composed into one sampling grid that resamples the features and the
//! running RGB skip image.

use candle_core::Tensor;

use crate::error::Result;
use crate::generator::config::GeneratorConfig;
use crate::params::{ParamSpec, ParamStore};
use crate::warp::{
    affine_warp_theta, apply_affine, grid_sample, interpolate_field, make_identity_field_like, predictor_specs,
    PredictorKind, PredictorShape, StnOutput, StnPredictor, WarpField,
};

/// How Transforms are applied during synthesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Deform {
    /// Skip every Transform.
    Off,
    /// Apply the predicted deformations as-is.
    On,
    /// Interpolate every deformation toward identity by α.
    Alpha(f64),
}

impl Deform {
    pub fn alpha(&self) -> f64 {
        match self {
            Deform::Off => 0.0,
            Deform::On => 1.0,
            Deform::Alpha(a) => *a,
        }
    }
}

pub fn transform_prefix(res: usize) -> String {
    format!("synthesis.b{res}.transform")
}

fn shape(cfg: &GeneratorConfig, res: usize) -> PredictorShape {
    PredictorShape {
        in_channels: cfg.channels(res),
        resolution: res,
        conv_channels: cfg.predictor_channels,
        hidden: cfg.predictor_hidden,
    }
}

pub fn transform_specs(cfg: &GeneratorConfig) -> Vec<ParamSpec> {
    let mut s = Vec::new();
    for &r in &cfg.transform_resolutions {
        let p = transform_prefix(r);
        s.extend(predictor_specs(&format!("{p}.basic"), &shape(cfg, r), PredictorKind::Affine));
        s.extend(predictor_specs(
            &format!("{p}.tps"),
            &shape(cfg, r),
            PredictorKind::Tps { grid: cfg.grid_size },
        ));
    }
    s
}

/// Deformation predicted by one Transform.
#[derive(Debug, Clone)]
pub struct TransformOutput {
    pub resolution: usize,
    /// Effective TPS field after α interpolation.
    pub field: WarpField,
    /// Effective affine matrices `[N, 2, 3]`.
    pub theta: Tensor,
}

pub struct Transform {
    resolution: usize,
    basic: StnPredictor,
    tps: StnPredictor,
}

impl Transform {
    pub fn load(store: &ParamStore, cfg: &GeneratorConfig, res: usize) -> Result<Self> {
        let p = transform_prefix(res);
        Ok(Self {
            resolution: res,
            basic: StnPredictor::load(store, &format!("{p}.basic"), shape(cfg, res), PredictorKind::Affine)?,
            tps: StnPredictor::load(
                store,
                &format!("{p}.tps"),
                shape(cfg, res),
                PredictorKind::Tps { grid: cfg.grid_size },
            )?,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Warp `x` and `img` by the composed deformation.
    pub fn forward(&self, x: &Tensor, img: &Tensor, alpha: f64) -> Result<(Tensor, Tensor, TransformOutput)> {
        let (n, _, h, w) = x.dims4()?;
        let theta = match self.basic.predict(x)? {
            StnOutput::Affine(t) => t,
            StnOutput::Tps(_) => unreachable!("basic head is affine"),
        };
        // both heads see the raw prediction path; α only scales the result
        let x_aff = affine_warp_theta(x, &theta)?;
        let field = match self.tps.predict(&x_aff)? {
            StnOutput::Tps(f) => f,
            StnOutput::Affine(_) => unreachable!("tps head predicts a field"),
        };
        let theta = if alpha == 1.0 {
            theta
        } else {
            let eye = identity_theta(n, x)?;
            (eye.affine(1.0 - alpha, 0.0)? + theta.affine(alpha, 0.0)?)?
        };
        let field = if alpha == 1.0 {
            field
        } else {
            let base = make_identity_field_like(n, field.grid_h(), field.grid_w(), field.dtype(), x.device())?;
            interpolate_field(&base, &field, alpha)?
        };
        let grid = apply_affine(&theta, &field.dense_grid(h, w)?)?;
        let x = grid_sample(x, &grid)?;
        let img = grid_sample(img, &grid)?;
        Ok((
            x,
            img,
            TransformOutput {
                resolution: self.resolution,
                field,
                theta,
            },
        ))
    }
}

fn identity_theta(n: usize, like: &Tensor) -> Result<Tensor> {
    let eye = Tensor::new(&[[1.0f64, 0.0, 0.0], [0.0, 1.0, 0.0]], like.device())?.to_dtype(like.dtype())?;
    Ok(eye.unsqueeze(0)?.broadcast_as((n, 2, 3))?.contiguous()?)
}
