//! Spatial-transformer heads: two stride-2 convolutions followed by two dense
//! layers. The last dense layer starts at zero, so a fresh head predicts the
//! identity deformation.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{add_channel_bias, conv2d, linear, lrelu};
use crate::params::{Init, ParamSpec, ParamStore};
use crate::warp::affine::theta_from_raw;
use crate::warp::field::WarpField;

pub const DEFAULT_CONV_CHANNELS: usize = 32;
pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    /// Displacements for a `grid × grid` control lattice.
    Tps { grid: usize },
    /// Translation, rotation and log-scale.
    Affine,
}

impl PredictorKind {
    pub fn outputs(&self) -> usize {
        match self {
            PredictorKind::Tps { grid } => grid * grid * 2,
            PredictorKind::Affine => 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictorShape {
    pub in_channels: usize,
    pub resolution: usize,
    pub conv_channels: usize,
    pub hidden: usize,
}

impl PredictorShape {
    pub fn new(in_channels: usize, resolution: usize) -> Self {
        Self {
            in_channels,
            resolution,
            conv_channels: DEFAULT_CONV_CHANNELS,
            hidden: DEFAULT_HIDDEN,
        }
    }

    fn flat(&self) -> usize {
        let s = self.resolution / 4;
        self.conv_channels * s * s
    }
}

/// Parameter layout under `prefix` (e.g. `synthesis.b32.transform.tps`).
pub fn predictor_specs(prefix: &str, shape: &PredictorShape, kind: PredictorKind) -> Vec<ParamSpec> {
    let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
    let (ci, cc) = (shape.in_channels, shape.conv_channels);
    vec![
        ParamSpec::new(format!("{prefix}.conv0.weight"), &[cc, ci, 3, 3], Init::Normal(he(ci * 9))),
        ParamSpec::new(format!("{prefix}.conv0.bias"), &[cc], Init::Zeros),
        ParamSpec::new(format!("{prefix}.conv1.weight"), &[cc, cc, 3, 3], Init::Normal(he(cc * 9))),
        ParamSpec::new(format!("{prefix}.conv1.bias"), &[cc], Init::Zeros),
        ParamSpec::new(
            format!("{prefix}.fc0.weight"),
            &[shape.hidden, shape.flat()],
            Init::Normal(he(shape.flat())),
        ),
        ParamSpec::new(format!("{prefix}.fc0.bias"), &[shape.hidden], Init::Zeros),
        ParamSpec::new(format!("{prefix}.fc1.weight"), &[kind.outputs(), shape.hidden], Init::Zeros),
        ParamSpec::new(format!("{prefix}.fc1.bias"), &[kind.outputs()], Init::Zeros),
    ]
}

/// Output of a spatial-transformer head.
#[derive(Debug, Clone)]
pub enum StnOutput {
    Tps(WarpField),
    /// `θ`, shape `[N, 2, 3]`.
    Affine(Tensor),
}

#[derive(Debug, Clone)]
pub struct StnPredictor {
    kind: PredictorKind,
    shape: PredictorShape,
    conv0: (Tensor, Tensor),
    conv1: (Tensor, Tensor),
    fc0: (Tensor, Tensor),
    fc1: (Tensor, Tensor),
}

impl StnPredictor {
    pub fn load(store: &ParamStore, prefix: &str, shape: PredictorShape, kind: PredictorKind) -> Result<Self> {
        if shape.resolution % 4 != 0 || shape.resolution < 4 {
            return Err(Error::invalid(format!(
                "predictor resolution {} must be a multiple of 4",
                shape.resolution
            )));
        }
        let pair = |n: &str| -> Result<(Tensor, Tensor)> {
            Ok((
                store.get(&format!("{prefix}.{n}.weight"))?,
                store.get(&format!("{prefix}.{n}.bias"))?,
            ))
        };
        Ok(Self {
            kind,
            conv0: pair("conv0")?,
            conv1: pair("conv1")?,
            fc0: pair("fc0")?,
            fc1: pair("fc1")?,
            shape,
        })
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    /// Raw head output `[N, outputs]`.
    pub fn forward_raw(&self, features: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = features.dims4()?;
        if c != self.shape.in_channels || h != self.shape.resolution || w != self.shape.resolution {
            return Err(Error::shape(format!(
                "predictor built for [{}, {r}, {r}], got [{c}, {h}, {w}]",
                self.shape.in_channels,
                r = self.shape.resolution
            )));
        }
        let x = conv2d(features, &self.conv0.0, 1, 2)?;
        let x = lrelu(&add_channel_bias(&x, &self.conv0.1)?)?;
        let x = conv2d(&x, &self.conv1.0, 1, 2)?;
        let x = lrelu(&add_channel_bias(&x, &self.conv1.1)?)?;
        let x = x.reshape((n, ()))?;
        let x = lrelu(&linear(&x, &self.fc0.0, Some(&self.fc0.1), 1.0, 1.0)?)?;
        linear(&x, &self.fc1.0, Some(&self.fc1.1), 1.0, 1.0)
    }

    pub fn predict(&self, features: &Tensor) -> Result<StnOutput> {
        let raw = self.forward_raw(features)?;
        let n = raw.dim(0)?;
        Ok(match self.kind {
            PredictorKind::Tps { grid } => StnOutput::Tps(WarpField::new(raw.reshape((n, grid, grid, 2))?)?),
            PredictorKind::Affine => StnOutput::Affine(theta_from_raw(&raw)?),
        })
    }
}

/// Free-function form: predict a deformation for `features`.
pub fn predict_field(predictor: &StnPredictor, features: &Tensor) -> Result<StnOutput> {
    predictor.predict(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Initializer;
    use candle_core::{DType, Device};

    fn build(kind: PredictorKind, seed: u64) -> (ParamStore, StnPredictor) {
        let shape = PredictorShape {
            in_channels: 4,
            resolution: 16,
            conv_channels: 8,
            hidden: 16,
        };
        let specs = predictor_specs("p", &shape, kind);
        let mut store = ParamStore::new(DType::F64, &Device::Cpu);
        store.init_missing(&specs, &mut Initializer::new(seed)).unwrap();
        let pred = StnPredictor::load(&store, "p", shape, kind).unwrap();
        (store, pred)
    }

    fn input(seed: u64) -> Tensor {
        let mut init = Initializer::new(seed);
        Tensor::from_vec(init.normal_vec(2 * 4 * 16 * 16, 1.0), (2, 4, 16, 16), &Device::Cpu).unwrap()
    }

    #[test]
    fn zero_head_predicts_identity() {
        let (_, p) = build(PredictorKind::Tps { grid: 10 }, 1);
        match p.predict(&input(2)).unwrap() {
            StnOutput::Tps(f) => {
                let s = f.displacements().abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
                assert_eq!(s, 0.0);
                assert_eq!(f.displacements().dims(), &[2, 10, 10, 2]);
            }
            _ => panic!("expected tps output"),
        }
        let (_, a) = build(PredictorKind::Affine, 1);
        match a.predict(&input(2)).unwrap() {
            StnOutput::Affine(theta) => {
                let t = theta.to_vec3::<f64>().unwrap();
                assert_eq!(t[0], vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
            }
            _ => panic!("expected affine output"),
        }
    }

    #[test]
    fn identical_inputs_identical_fields() {
        let (store, p) = build(PredictorKind::Tps { grid: 4 }, 3);
        let mut init = Initializer::new(9);
        let w = Tensor::from_vec(init.normal_vec(32 * 16, 0.1), (32, 16), &Device::Cpu).unwrap();
        store.set("p.fc1.weight", &w).unwrap();
        let a = p.forward_raw(&input(4)).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let b = p.forward_raw(&input(4)).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn resolution_mismatch_is_rejected() {
        let (_, p) = build(PredictorKind::Affine, 1);
        let x = Tensor::zeros((1, 4, 8, 8), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(p.predict(&x), Err(Error::ShapeMismatch(_))));
    }
}
