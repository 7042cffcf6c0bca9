//! Face identity embeddings for the directional identity metric.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::imageops::resize;
use crate::params::{Init, Initializer, ParamSpec, ParamStore};

pub trait IdentityNet: Send + Sync {
    fn name(&self) -> &str;

    /// Embedding per image, `[N, D]`, for images in `[-1, 1]`.
    fn embed(&self, images: &Tensor) -> Result<Tensor>;
}

/// Fixed-seed random projection of a pooled thumbnail.
pub struct StubIdentity {
    projection: Tensor,
}

impl StubIdentity {
    pub const THUMB: usize = 8;
    pub const DIM: usize = 128;

    pub fn new(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let fan_in = 3 * Self::THUMB * Self::THUMB;
        let spec = ParamSpec::new("proj", &[fan_in, Self::DIM], Init::Normal(1.0 / (fan_in as f64).sqrt()));
        let projection = Initializer::new(seed).tensor(&spec, dtype, device)?;
        Ok(Self { projection })
    }
}

impl IdentityNet for StubIdentity {
    fn name(&self) -> &str {
        "stub-identity"
    }

    fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let n = images.dim(0)?;
        let thumb = resize(images, Self::THUMB)?.reshape((n, ()))?;
        Ok(thumb.matmul(&self.projection.to_dtype(images.dtype())?)?)
    }
}

/// IResNet trunk in the insightface `arcface_torch` layout.
#[derive(Debug, Clone)]
pub struct IResNetConfig {
    pub layers: [usize; 4],
    pub embedding: usize,
    pub input: usize,
}

impl IResNetConfig {
    pub fn r50() -> Self {
        Self {
            layers: [3, 4, 14, 3],
            embedding: 512,
            input: 112,
        }
    }
}

const PLANES: [usize; 4] = [64, 128, 256, 512];
const BN_EPS: f64 = 1e-5;

fn bn_specs(prefix: &str, c: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.weight"), &[c], Init::Const(1.0)),
        ParamSpec::new(format!("{prefix}.bias"), &[c], Init::Zeros),
        ParamSpec::new(format!("{prefix}.running_mean"), &[c], Init::Zeros),
        ParamSpec::new(format!("{prefix}.running_var"), &[c], Init::Const(1.0)),
    ]
}

struct BatchNorm {
    scale: Tensor,
    shift: Tensor,
}

impl BatchNorm {
    fn load(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w = store.get(&format!("{prefix}.weight"))?;
        let b = store.get(&format!("{prefix}.bias"))?;
        let m = store.get(&format!("{prefix}.running_mean"))?;
        let v = store.get(&format!("{prefix}.running_var"))?;
        let scale = w.div(&(v + BN_EPS)?.sqrt()?)?;
        let shift = (b - m.mul(&scale)?)?;
        Ok(Self { scale, shift })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.scale.dim(0)?;
        let shape: Vec<usize> = if x.rank() == 4 { vec![1, c, 1, 1] } else { vec![1, c] };
        Ok(x.broadcast_mul(&self.scale.reshape(shape.as_slice())?)?
            .broadcast_add(&self.shift.reshape(shape.as_slice())?)?)
    }
}

fn prelu(x: &Tensor, a: &Tensor) -> Result<Tensor> {
    let c = a.dim(0)?;
    let neg = x.minimum(0.0)?.broadcast_mul(&a.reshape((1, c, 1, 1))?)?;
    Ok((x.relu()? + neg)?)
}

struct IBlock {
    bn1: BatchNorm,
    conv1: Tensor,
    bn2: BatchNorm,
    prelu: Tensor,
    conv2: Tensor,
    bn3: BatchNorm,
    stride: usize,
    downsample: Option<(Tensor, BatchNorm)>,
}

impl IBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.bn1.forward(x)?;
        let y = y.conv2d(&self.conv1, 1, 1, 1, 1)?;
        let y = prelu(&self.bn2.forward(&y)?, &self.prelu)?;
        let y = y.conv2d(&self.conv2, 1, self.stride, 1, 1)?;
        let y = self.bn3.forward(&y)?;
        let skip = match &self.downsample {
            Some((w, bn)) => bn.forward(&x.conv2d(w, 0, self.stride, 1, 1)?)?,
            None => x.clone(),
        };
        Ok((y + skip)?)
    }
}

pub struct ArcFace {
    config: IResNetConfig,
    conv1: Tensor,
    bn1: BatchNorm,
    prelu: Tensor,
    blocks: Vec<IBlock>,
    bn2: BatchNorm,
    fc: (Tensor, Tensor),
    features: BatchNorm,
}

impl ArcFace {
    pub fn specs(config: &IResNetConfig) -> Vec<ParamSpec> {
        let he = |fan: usize| Init::Normal((2.0 / fan as f64).sqrt());
        let mut s = vec![
            ParamSpec::new("conv1.weight", &[64, 3, 3, 3], he(27)),
            ParamSpec::new("prelu.weight", &[64], Init::Const(0.25)),
        ];
        s.extend(bn_specs("bn1", 64));
        let mut inplanes = 64;
        for (l, (&count, &planes)) in config.layers.iter().zip(&PLANES).enumerate() {
            for b in 0..count {
                let p = format!("layer{}.{b}", l + 1);
                let cin = if b == 0 { inplanes } else { planes };
                s.extend(bn_specs(&format!("{p}.bn1"), cin));
                s.push(ParamSpec::new(format!("{p}.conv1.weight"), &[planes, cin, 3, 3], he(cin * 9)));
                s.extend(bn_specs(&format!("{p}.bn2"), planes));
                s.push(ParamSpec::new(format!("{p}.prelu.weight"), &[planes], Init::Const(0.25)));
                s.push(ParamSpec::new(format!("{p}.conv2.weight"), &[planes, planes, 3, 3], he(planes * 9)));
                s.extend(bn_specs(&format!("{p}.bn3"), planes));
                if b == 0 {
                    s.push(ParamSpec::new(format!("{p}.downsample.0.weight"), &[planes, cin, 1, 1], he(cin)));
                    s.extend(bn_specs(&format!("{p}.downsample.1"), planes));
                }
            }
            inplanes = planes;
        }
        let side = config.input / 16;
        let flat = 512 * side * side;
        s.extend(bn_specs("bn2", 512));
        s.push(ParamSpec::new("fc.weight", &[config.embedding, flat], he(flat)));
        s.push(ParamSpec::new("fc.bias", &[config.embedding], Init::Zeros));
        s.extend(bn_specs("features", config.embedding));
        s
    }

    pub fn from_store(store: &ParamStore, config: IResNetConfig) -> Result<Self> {
        store.validate(&Self::specs(&config))?;
        let mut blocks = Vec::new();
        for (l, &count) in config.layers.iter().enumerate() {
            for b in 0..count {
                let p = format!("layer{}.{b}", l + 1);
                let downsample = if b == 0 {
                    Some((
                        store.get(&format!("{p}.downsample.0.weight"))?,
                        BatchNorm::load(store, &format!("{p}.downsample.1"))?,
                    ))
                } else {
                    None
                };
                blocks.push(IBlock {
                    bn1: BatchNorm::load(store, &format!("{p}.bn1"))?,
                    conv1: store.get(&format!("{p}.conv1.weight"))?,
                    bn2: BatchNorm::load(store, &format!("{p}.bn2"))?,
                    prelu: store.get(&format!("{p}.prelu.weight"))?,
                    conv2: store.get(&format!("{p}.conv2.weight"))?,
                    bn3: BatchNorm::load(store, &format!("{p}.bn3"))?,
                    stride: if b == 0 { 2 } else { 1 },
                    downsample,
                });
            }
        }
        Ok(Self {
            conv1: store.get("conv1.weight")?,
            bn1: BatchNorm::load(store, "bn1")?,
            prelu: store.get("prelu.weight")?,
            blocks,
            bn2: BatchNorm::load(store, "bn2")?,
            fc: (store.get("fc.weight")?, store.get("fc.bias")?),
            features: BatchNorm::load(store, "features")?,
            config,
        })
    }

    pub fn load(path: &Path, config: IResNetConfig, dtype: DType, device: &Device) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let tensors = candle_core::safetensors::load(path, device)?;
        let mut store = ParamStore::from_tensors(tensors, dtype, device)?;
        store.freeze();
        Self::from_store(&store, config)
    }
}

impl IdentityNet for ArcFace {
    fn name(&self) -> &str {
        "arcface-iresnet"
    }

    fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let n = images.dim(0)?;
        let x = resize(images, self.config.input)?;
        let x = x.conv2d(&self.conv1, 1, 1, 1, 1)?;
        let mut x = prelu(&self.bn1.forward(&x)?, &self.prelu)?;
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        let x = self.bn2.forward(&x)?.reshape((n, ()))?;
        let x = crate::nn::linear(&x, &self.fc.0, Some(&self.fc.1), 1.0, 1.0)?;
        self.features.forward(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_embeds_to_fixed_dim() {
        let net = StubIdentity::new(0, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::zeros((2, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(net.embed(&x).unwrap().dims(), &[2, StubIdentity::DIM]);
    }

    #[test]
    fn small_iresnet_layout_runs() {
        let cfg = IResNetConfig {
            layers: [1, 1, 1, 1],
            embedding: 32,
            input: 32,
        };
        let mut store = ParamStore::new(DType::F32, &Device::Cpu);
        store.init_missing(&ArcFace::specs(&cfg), &mut Initializer::new(1)).unwrap();
        store.freeze();
        let net = ArcFace::from_store(&store, cfg).unwrap();
        let x = Tensor::ones((1, 3, 48, 48), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(net.embed(&x).unwrap().dims(), &[1, 32]);
    }
}
