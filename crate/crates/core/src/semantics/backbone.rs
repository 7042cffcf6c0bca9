//! Patch-token backbones.

use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{layer_norm, linear, softmax_last};
use crate::params::{Init, Initializer, ParamSpec, ParamStore};

pub trait TokenBackbone: Send + Sync {
    fn name(&self) -> &str;
    fn patch_size(&self) -> usize;
    /// Square input side the backbone expects.
    fn input_resolution(&self) -> usize;
    fn dim(&self) -> usize;
    fn depth(&self) -> usize;

    /// Patch tokens (class token removed) after each requested 1-based layer,
    /// `[N, n_patches, dim]` each. `images` are already normalized and sized.
    fn forward_layers(&self, images: &Tensor, layers: &[usize]) -> Result<Vec<Tensor>>;

    fn n_patches(&self) -> usize {
        let s = self.input_resolution() / self.patch_size();
        s * s
    }
}

/// `[N, C, S, S] -> [N, (S/p)², C·p·p]`, patches in row-major order, each
/// flattened as `(channel, row, column)`.
pub fn patchify(images: &Tensor, patch: usize) -> Result<Tensor> {
    let (n, c, h, w) = images.dims4()?;
    if h % patch != 0 || w % patch != 0 {
        return Err(Error::shape(format!("{h}x{w} input is not divisible by patch size {patch}")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let x = images
        .reshape((n, c, gh, patch, gw, patch))?
        .permute((0, 2, 4, 1, 3, 5))?
        .contiguous()?;
    Ok(x.reshape((n, gh * gw, c * patch * patch))?)
}

/// Fixed-seed linear patch embedder: layer `l` maps every flattened patch
/// through its own matrix `W_l`, with no bias.
pub struct StubBackbone {
    patch: usize,
    resolution: usize,
    dim: usize,
    weights: Vec<Tensor>,
}

impl StubBackbone {
    pub const DEPTH: usize = 12;

    pub fn new(seed: u64, resolution: usize, patch: usize, dim: usize, dtype: DType, device: &Device) -> Result<Self> {
        if patch == 0 || resolution % patch != 0 {
            return Err(Error::invalid(format!("resolution {resolution} not divisible by patch {patch}")));
        }
        let fan_in = 3 * patch * patch;
        let weights = (1..=Self::DEPTH)
            .map(|l| {
                let spec = ParamSpec::new(format!("w{l}"), &[fan_in, dim], Init::Normal(1.0 / (fan_in as f64).sqrt()));
                Initializer::new(seed.wrapping_add(l as u64)).tensor(&spec, dtype, device)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            patch,
            resolution,
            dim,
            weights,
        })
    }

    /// 64×64 input, 8×8 patches, 32-dimensional tokens.
    pub fn default_test(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        Self::new(seed, 64, 8, 32, dtype, device)
    }

    /// `[3·p·p, dim]` matrix of layer `l` (1-based).
    pub fn layer_weight(&self, l: usize) -> Result<&Tensor> {
        self.weights
            .get(l.wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("stub layer {l} outside 1..={}", Self::DEPTH)))
    }
}

impl TokenBackbone for StubBackbone {
    fn name(&self) -> &str {
        "stub-vit"
    }
    fn patch_size(&self) -> usize {
        self.patch
    }
    fn input_resolution(&self) -> usize {
        self.resolution
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn depth(&self) -> usize {
        Self::DEPTH
    }

    fn forward_layers(&self, images: &Tensor, layers: &[usize]) -> Result<Vec<Tensor>> {
        let p = patchify(images, self.patch)?;
        let (n, np, f) = p.dims3()?;
        let flat = p.reshape((n * np, f))?;
        layers
            .iter()
            .map(|&l| {
                let w = self.layer_weight(l)?.to_dtype(images.dtype())?;
                Ok(flat.matmul(&w)?.reshape((n, np, self.dim))?)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub patch: usize,
    pub resolution: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl VitConfig {
    /// DINO ViT-S/8.
    pub fn dino_s8() -> Self {
        Self {
            patch: 8,
            resolution: 224,
            dim: 384,
            depth: 12,
            heads: 6,
            mlp_ratio: 4,
        }
    }

    /// DINO ViT-B/8.
    pub fn dino_b8() -> Self {
        Self {
            dim: 768,
            heads: 12,
            ..Self::dino_s8()
        }
    }
}

const VIT_LN_EPS: f64 = 1e-6;

/// Vision transformer in the timm / DINO parameter layout.
pub struct VitBackbone {
    config: VitConfig,
    store: ParamStore,
}

impl VitBackbone {
    pub fn specs(c: &VitConfig) -> Vec<ParamSpec> {
        let d = c.dim;
        let np = (c.resolution / c.patch).pow(2);
        let h = d * c.mlp_ratio;
        let tn = Init::Normal(0.02);
        let mut s = vec![
            ParamSpec::new("cls_token", &[1, 1, d], tn),
            ParamSpec::new("pos_embed", &[1, np + 1, d], tn),
            ParamSpec::new("patch_embed.proj.weight", &[d, 3, c.patch, c.patch], tn),
            ParamSpec::new("patch_embed.proj.bias", &[d], Init::Zeros),
        ];
        for i in 0..c.depth {
            let p = format!("blocks.{i}");
            for (name, shape, init) in [
                ("norm1.weight", vec![d], Init::Const(1.0)),
                ("norm1.bias", vec![d], Init::Zeros),
                ("attn.qkv.weight", vec![3 * d, d], tn),
                ("attn.qkv.bias", vec![3 * d], Init::Zeros),
                ("attn.proj.weight", vec![d, d], tn),
                ("attn.proj.bias", vec![d], Init::Zeros),
                ("norm2.weight", vec![d], Init::Const(1.0)),
                ("norm2.bias", vec![d], Init::Zeros),
                ("mlp.fc1.weight", vec![h, d], tn),
                ("mlp.fc1.bias", vec![h], Init::Zeros),
                ("mlp.fc2.weight", vec![d, h], tn),
                ("mlp.fc2.bias", vec![d], Init::Zeros),
            ] {
                s.push(ParamSpec::new(format!("{p}.{name}"), &shape, init));
            }
        }
        s
    }

    pub fn from_store(config: VitConfig, mut store: ParamStore) -> Result<Self> {
        if config.dim % config.heads != 0 {
            return Err(Error::Config(format!("dim {} not divisible by {} heads", config.dim, config.heads)));
        }
        store.validate(&Self::specs(&config))?;
        store.freeze();
        Ok(Self { config, store })
    }

    pub fn load(path: &Path, config: VitConfig, dtype: DType, device: &Device) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let tensors = candle_core::safetensors::load(path, device)?;
        let store = ParamStore::from_tensors(tensors, dtype, device)?;
        Self::from_store(config, store)
    }

    fn lin(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let w = self.store.get(&format!("{name}.weight"))?;
        let b = self.store.get(&format!("{name}.bias"))?;
        let (n, t, f) = x.dims3()?;
        let y = linear(&x.reshape((n * t, f))?, &w, Some(&b), 1.0, 1.0)?;
        Ok(y.reshape((n, t, ()))?)
    }

    fn norm(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        layer_norm(
            x,
            &self.store.get(&format!("{name}.weight"))?,
            &self.store.get(&format!("{name}.bias"))?,
            VIT_LN_EPS,
        )
    }

    fn block(&self, x: &Tensor, i: usize) -> Result<Tensor> {
        let p = format!("blocks.{i}");
        let (n, t, d) = x.dims3()?;
        let heads = self.config.heads;
        let hd = d / heads;
        let qkv = self
            .lin(&self.norm(x, &format!("{p}.norm1"))?, &format!("{p}.attn.qkv"))?
            .reshape((n, t, 3, heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let att = (q.matmul(&k.transpose(D::Minus2, D::Minus1)?.contiguous()?)? * (hd as f64).powf(-0.5))?;
        let att = softmax_last(&att)?;
        let o = att.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((n, t, d))?;
        let x = (x + self.lin(&o, &format!("{p}.attn.proj"))?)?;
        let h = self.lin(&self.norm(&x, &format!("{p}.norm2"))?, &format!("{p}.mlp.fc1"))?.gelu_erf()?;
        Ok((&x + self.lin(&h, &format!("{p}.mlp.fc2"))?)?)
    }
}

impl TokenBackbone for VitBackbone {
    fn name(&self) -> &str {
        "dino-vit"
    }
    fn patch_size(&self) -> usize {
        self.config.patch
    }
    fn input_resolution(&self) -> usize {
        self.config.resolution
    }
    fn dim(&self) -> usize {
        self.config.dim
    }
    fn depth(&self) -> usize {
        self.config.depth
    }

    fn forward_layers(&self, images: &Tensor, layers: &[usize]) -> Result<Vec<Tensor>> {
        let last = layers.iter().copied().max().unwrap_or(0);
        if last > self.config.depth || layers.contains(&0) {
            return Err(Error::invalid(format!("layers {layers:?} outside 1..={}", self.config.depth)));
        }
        let n = images.dim(0)?;
        let d = self.config.dim;
        let w = self.store.get("patch_embed.proj.weight")?;
        let b = self.store.get("patch_embed.proj.bias")?;
        let p = self.config.patch;
        let x = crate::nn::add_channel_bias(&images.conv2d(&w, 0, p, 1, 1)?, &b)?;
        let x = x.flatten_from(2)?.transpose(1, 2)?.contiguous()?;
        let cls = self.store.get("cls_token")?.broadcast_as((n, 1, d))?.contiguous()?;
        let mut x = Tensor::cat(&[&cls, &x], 1)?.broadcast_add(&self.store.get("pos_embed")?)?;
        let mut outs = vec![None; layers.len()];
        for i in 0..last {
            x = self.block(&x, i)?;
            for (slot, &l) in outs.iter_mut().zip(layers) {
                if l == i + 1 {
                    let t = x.dim(1)?;
                    *slot = Some(x.narrow(1, 1, t - 1)?);
                }
            }
        }
        outs.into_iter()
            .map(|o| o.ok_or_else(|| Error::invalid("layer not produced")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patchify_order() {
        let x = Tensor::arange(0f32, 2.0 * 16.0, &Device::Cpu).unwrap().reshape((1, 2, 4, 4)).unwrap();
        let p = patchify(&x, 2).unwrap();
        assert_eq!(p.dims(), &[1, 4, 8]);
        let first = p.get(0).unwrap().get(1).unwrap().to_vec1::<f32>().unwrap();
        // patch (0, 1): channel 0 rows 0..2 cols 2..4, then channel 1
        assert_eq!(first, vec![2.0, 3.0, 6.0, 7.0, 18.0, 19.0, 22.0, 23.0]);
    }

    #[test]
    fn tiny_vit_runs_and_drops_cls() {
        let cfg = VitConfig {
            patch: 4,
            resolution: 16,
            dim: 8,
            depth: 3,
            heads: 2,
            mlp_ratio: 2,
        };
        let mut store = ParamStore::new(DType::F32, &Device::Cpu);
        store.init_missing(&VitBackbone::specs(&cfg), &mut Initializer::new(0)).unwrap();
        let vit = VitBackbone::from_store(cfg, store).unwrap();
        let x = Tensor::ones((2, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        let outs = vit.forward_layers(&x, &[1, 3]).unwrap();
        assert_eq!(outs[0].dims(), &[2, 16, 8]);
        assert_eq!(outs[1].dims(), &[2, 16, 8]);
        assert!(vit.forward_layers(&x, &[4]).is_err());
    }
}
