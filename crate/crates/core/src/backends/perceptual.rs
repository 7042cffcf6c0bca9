//! Perceptual feature networks: the LPIPS distance used by inversion and
//! evaluation, and the activations behind the directional content metric.

use std::path::Path;

use candle_core::{DType, Device, Tensor, D};

use crate::error::{Error, Result};
use crate::imageops::resize;
use crate::nn::{add_channel_bias, conv2d};
use crate::params::{Init, Initializer, ParamSpec, ParamStore};

pub trait PerceptualNet: Send + Sync {
    fn name(&self) -> &str;

    /// Activations of each scored stage for images in `[-1, 1]`.
    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>>;

    /// Non-negative per-channel weights of each stage, `[C_l]`.
    fn stage_weights(&self) -> &[Tensor];

    /// Stage indices whose flattened activations form the directional
    /// content feature.
    fn direction_stages(&self) -> &[usize];

    /// Human-readable names of the direction stages.
    fn direction_layer_names(&self) -> Vec<String>;

    /// LPIPS-style distance per sample, shape `[N]`.
    fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let fa = self.features(a)?;
        let fb = self.features(b)?;
        let mut total: Option<Tensor> = None;
        for ((xa, xb), w) in fa.iter().zip(&fb).zip(self.stage_weights()) {
            let na = unit_normalize_channels(xa)?;
            let nb = unit_normalize_channels(xb)?;
            let c = w.dim(0)?;
            let d = (na - nb)?
                .sqr()?
                .broadcast_mul(&w.to_dtype(xa.dtype())?.reshape((1, c, 1, 1))?)?
                .sum(1)?;
            let d = d.mean(D::Minus1)?.mean(D::Minus1)?;
            total = Some(match total {
                Some(t) => (t + d)?,
                None => d,
            });
        }
        total.ok_or_else(|| Error::invalid("perceptual network has no stages"))
    }

    /// Flattened direction-stage activations, `[N, D]`.
    fn direction_features(&self, images: &Tensor) -> Result<Tensor> {
        let feats = self.features(images)?;
        let n = images.dim(0)?;
        let parts: Vec<Tensor> = self
            .direction_stages()
            .iter()
            .map(|&i| feats[i].reshape((n, ())))
            .collect::<candle_core::Result<_>>()?;
        Ok(Tensor::cat(&parts, 1)?)
    }
}

fn unit_normalize_channels(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(1)?.sqrt()? + 1e-10)?;
    Ok(x.broadcast_div(&norm)?)
}

/// Fixed-seed random convolutional features: three conv/ReLU/pool stages.
/// Stands in for a pretrained perceptual network in tests.
pub struct StubPerceptual {
    convs: Vec<(Tensor, Tensor)>,
    weights: Vec<Tensor>,
}

impl StubPerceptual {
    pub const CHANNELS: [usize; 3] = [8, 16, 32];

    pub fn new(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut init = Initializer::new(seed);
        let mut convs = Vec::new();
        let mut weights = Vec::new();
        let mut cin = 3;
        for (i, &c) in Self::CHANNELS.iter().enumerate() {
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let w = init.tensor(&ParamSpec::new(format!("conv{i}"), &[c, cin, 3, 3], Init::Normal(std)), dtype, device)?;
            let b = init.tensor(&ParamSpec::new(format!("bias{i}"), &[c], Init::Normal(0.05)), dtype, device)?;
            convs.push((w, b));
            weights.push(Tensor::full(1.0 / c as f64, c, device)?.to_dtype(dtype)?);
            cin = c;
        }
        Ok(Self { convs, weights })
    }
}

impl PerceptualNet for StubPerceptual {
    fn name(&self) -> &str {
        "stub-perceptual"
    }

    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let mut x = images.clone();
        let mut out = Vec::new();
        for (w, b) in &self.convs {
            x = add_channel_bias(&conv2d(&x, w, 1, 1)?, b)?.relu()?;
            out.push(x.clone());
            x = x.avg_pool2d(2)?;
        }
        Ok(out)
    }

    fn stage_weights(&self) -> &[Tensor] {
        &self.weights
    }

    fn direction_stages(&self) -> &[usize] {
        &[1, 2]
    }

    fn direction_layer_names(&self) -> Vec<String> {
        vec!["stub.stage2".into(), "stub.stage3".into()]
    }
}

/// VGG-16 trunk (torchvision `features.*` layout) with LPIPS linear heads
/// (`lin{k}.model.1.weight`).
pub struct VggLpips {
    convs: Vec<(Tensor, Tensor)>,
    weights: Vec<Tensor>,
    resolution: Option<usize>,
}

/// `(torchvision index, in, out)` per conv; stages end at relu1_2, relu2_2,
/// relu3_3, relu4_3 and relu5_3.
const VGG_CONVS: [(usize, usize, usize); 13] = [
    (0, 3, 64),
    (2, 64, 64),
    (5, 64, 128),
    (7, 128, 128),
    (10, 128, 256),
    (12, 256, 256),
    (14, 256, 256),
    (17, 256, 512),
    (19, 512, 512),
    (21, 512, 512),
    (24, 512, 512),
    (26, 512, 512),
    (28, 512, 512),
];
const VGG_STAGE_ENDS: [usize; 5] = [1, 3, 6, 9, 12];
const LPIPS_SHIFT: [f64; 3] = [-0.030, -0.088, -0.188];
const LPIPS_SCALE: [f64; 3] = [0.458, 0.448, 0.450];

impl VggLpips {
    pub fn specs() -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for (idx, cin, cout) in VGG_CONVS {
            let std = (2.0 / (cin * 9) as f64).sqrt();
            specs.push(ParamSpec::new(format!("features.{idx}.weight"), &[cout, cin, 3, 3], Init::Normal(std)));
            specs.push(ParamSpec::new(format!("features.{idx}.bias"), &[cout], Init::Zeros));
        }
        for (k, &end) in VGG_STAGE_ENDS.iter().enumerate() {
            let c = VGG_CONVS[end].2;
            specs.push(ParamSpec::new(format!("lin{k}.model.1.weight"), &[1, c, 1, 1], Init::Const(1.0 / c as f64)));
        }
        specs
    }

    pub fn from_store(store: &ParamStore, resolution: Option<usize>) -> Result<Self> {
        store.validate(&Self::specs())?;
        let mut convs = Vec::new();
        for (idx, _, _) in VGG_CONVS {
            convs.push((
                store.get(&format!("features.{idx}.weight"))?,
                store.get(&format!("features.{idx}.bias"))?,
            ));
        }
        let mut weights = Vec::new();
        for k in 0..VGG_STAGE_ENDS.len() {
            let w = store.get(&format!("lin{k}.model.1.weight"))?;
            weights.push(w.flatten_all()?.relu()?);
        }
        Ok(Self {
            convs,
            weights,
            resolution,
        })
    }

    pub fn load(path: &Path, resolution: Option<usize>, dtype: DType, device: &Device) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let tensors = candle_core::safetensors::load(path, device)?;
        let mut store = ParamStore::from_tensors(tensors, dtype, device)?;
        store.freeze();
        Self::from_store(&store, resolution)
    }
}

impl PerceptualNet for VggLpips {
    fn name(&self) -> &str {
        "vgg16-lpips"
    }

    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let images = match self.resolution {
            Some(r) => resize(images, r)?,
            None => images.clone(),
        };
        let dev = images.device();
        let dt = images.dtype();
        let shift = Tensor::new(&LPIPS_SHIFT, dev)?.to_dtype(dt)?.reshape((1, 3, 1, 1))?;
        let scale = Tensor::new(&LPIPS_SCALE, dev)?.to_dtype(dt)?.reshape((1, 3, 1, 1))?;
        let mut x = images.broadcast_sub(&shift)?.broadcast_div(&scale)?;
        let mut out = Vec::new();
        for (i, (w, b)) in self.convs.iter().enumerate() {
            if i > 0 && VGG_STAGE_ENDS.contains(&(i - 1)) {
                x = x.max_pool2d(2)?;
            }
            x = add_channel_bias(&conv2d(&x, w, 1, 1)?, b)?.relu()?;
            if VGG_STAGE_ENDS.contains(&i) {
                out.push(x.clone());
            }
        }
        Ok(out)
    }

    fn stage_weights(&self) -> &[Tensor] {
        &self.weights
    }

    fn direction_stages(&self) -> &[usize] {
        &[2, 3]
    }

    fn direction_layer_names(&self) -> Vec<String> {
        vec!["relu3_3".into(), "relu4_3".into()]
    }
}

/// Mean LPIPS value as f64, for reporting.
pub fn mean_distance(net: &dyn PerceptualNet, a: &Tensor, b: &Tensor) -> Result<f64> {
    let d = net.distance(a, b)?;
    Ok(d.mean_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
