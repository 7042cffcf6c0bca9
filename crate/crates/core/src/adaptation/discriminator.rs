//! Residual StyleGAN2 discriminator trunk (community parameter layout) with
//! a 1×1 patch head attached to the block whose receptive field is closest
//! to the target patch size.

use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{add_channel_bias, conv2d, downsample2x, fir_filter, LRELU_GAIN, LRELU_SLOPE};
use crate::params::{Init, Initializer, ParamSpec, ParamStore};

pub const TARGET_PATCH: usize = 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub resolution: usize,
    pub channel_base: usize,
    pub channel_max: usize,
    /// Pretrained trunk weights; random initialization when absent.
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub target_patch: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self::mini()
    }
}

impl DiscriminatorConfig {
    pub fn mini() -> Self {
        Self {
            resolution: 64,
            channel_base: 1024,
            channel_max: 64,
            checkpoint: None,
            seed: 1,
            target_patch: TARGET_PATCH,
        }
    }

    pub fn ffhq(checkpoint: impl Into<PathBuf>) -> Self {
        Self {
            resolution: 1024,
            channel_base: 32768,
            channel_max: 512,
            checkpoint: Some(checkpoint.into()),
            ..Self::mini()
        }
    }

    pub fn channels(&self, res: usize) -> usize {
        (self.channel_base / res).min(self.channel_max)
    }

    /// Block resolutions from the input down to 8.
    pub fn block_resolutions(&self) -> Vec<usize> {
        let mut v = Vec::new();
        let mut r = self.resolution;
        while r >= 8 {
            v.push(r);
            r /= 2;
        }
        v
    }
}

/// Receptive field (in input pixels) at the output of each block.
pub fn receptive_fields(cfg: &DiscriminatorConfig) -> Vec<(usize, usize)> {
    let mut rf = 1usize;
    let mut jump = 1usize;
    let mut out = Vec::new();
    for r in cfg.block_resolutions() {
        rf += 2 * jump; // conv0, 3×3
        rf += 3 * jump; // blur, 4 taps
        rf += 2 * jump; // conv1, 3×3 stride 2
        jump *= 2;
        out.push((r, rf));
    }
    out
}

/// Block whose output receptive field is closest to `target`; ties go to
/// the shallower block.
pub fn select_readoff(cfg: &DiscriminatorConfig) -> Result<(usize, usize)> {
    receptive_fields(cfg)
        .into_iter()
        .min_by_key(|(_, rf)| rf.abs_diff(cfg.target_patch))
        .ok_or_else(|| Error::Config(format!("no discriminator blocks at resolution {}", cfg.resolution)))
}

fn conv_spec(name: &str, cout: usize, cin: usize, k: usize, bias: bool) -> Vec<ParamSpec> {
    let mut s = vec![ParamSpec::new(format!("{name}.weight"), &[cout, cin, k, k], Init::Normal(1.0))];
    if bias {
        s.push(ParamSpec::new(format!("{name}.bias"), &[cout], Init::Zeros));
    }
    s
}

pub struct Discriminator {
    config: DiscriminatorConfig,
    store: ParamStore,
    readoff: usize,
    readoff_rf: usize,
}

impl Discriminator {
    fn trunk_specs(cfg: &DiscriminatorConfig, readoff: usize) -> Vec<ParamSpec> {
        let r0 = cfg.resolution;
        let mut s = conv_spec(&format!("b{r0}.fromrgb"), cfg.channels(r0), 3, 1, true);
        for r in cfg.block_resolutions() {
            let (c, co) = (cfg.channels(r), cfg.channels(r / 2));
            s.extend(conv_spec(&format!("b{r}.conv0"), c, c, 3, true));
            s.extend(conv_spec(&format!("b{r}.conv1"), co, c, 3, true));
            s.extend(conv_spec(&format!("b{r}.skip"), co, c, 1, false));
            if r == readoff {
                break;
            }
        }
        s
    }

    pub fn specs(cfg: &DiscriminatorConfig) -> Result<Vec<ParamSpec>> {
        let (readoff, _) = select_readoff(cfg)?;
        let mut s = Self::trunk_specs(cfg, readoff);
        s.extend(conv_spec("patch_head", 1, cfg.channels(readoff / 2), 1, true));
        Ok(s)
    }

    pub fn new(cfg: &DiscriminatorConfig, dtype: DType, device: &Device) -> Result<Self> {
        if cfg.resolution < 8 || !cfg.resolution.is_power_of_two() {
            return Err(Error::Config(format!("discriminator resolution {} must be a power of two >= 8", cfg.resolution)));
        }
        let (readoff, rf) = select_readoff(cfg)?;
        let mut store = ParamStore::new(dtype, device);
        if let Some(path) = &cfg.checkpoint {
            if !path.exists() {
                return Err(Error::MissingCheckpoint(path.clone()));
            }
            let tensors = candle_core::safetensors::load(path, device)?;
            for spec in Self::trunk_specs(cfg, readoff) {
                let t = tensors.get(&spec.name).ok_or_else(|| Error::MissingTensor(spec.name.clone()))?;
                store.insert(spec.name.clone(), t)?;
            }
        }
        store.init_missing(&Self::specs(cfg)?, &mut Initializer::new(cfg.seed))?;
        store.validate(&Self::specs(cfg)?)?;
        log::info!("patch logits read off after block b{readoff} (receptive field {rf}x{rf})");
        Ok(Self {
            config: cfg.clone(),
            store,
            readoff,
            readoff_rf: rf,
        })
    }

    pub fn from_store(cfg: &DiscriminatorConfig, store: ParamStore) -> Result<Self> {
        let (readoff, rf) = select_readoff(cfg)?;
        store.validate(&Self::specs(cfg)?)?;
        Ok(Self {
            config: cfg.clone(),
            store,
            readoff,
            readoff_rf: rf,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// `(block resolution, receptive field)` of the patch read-off.
    pub fn readoff(&self) -> (usize, usize) {
        (self.readoff, self.readoff_rf)
    }

    fn get(&self, name: &str, detach: bool) -> Result<Tensor> {
        let t = self.store.get(name)?;
        Ok(if detach { t.detach() } else { t })
    }

    fn conv(&self, x: &Tensor, name: &str, act_gain: Option<f64>, down: bool, detach: bool) -> Result<Tensor> {
        let w = self.get(&format!("{name}.weight"), detach)?;
        let (_, cin, k, _) = w.dims4()?;
        let w = w.affine(1.0 / ((cin * k * k) as f64).sqrt(), 0.0)?;
        let y = if down && k == 1 {
            conv2d(&downsample2x(x)?, &w, 0, 1)?
        } else if down {
            conv2d(&fir_filter(x, 1.0, (2, 2))?, &w, 0, 2)?
        } else {
            conv2d(x, &w, k / 2, 1)?
        };
        let y = if self.store.contains(&format!("{name}.bias")) {
            add_channel_bias(&y, &self.get(&format!("{name}.bias"), detach)?)?
        } else {
            y
        };
        Ok(match act_gain {
            Some(g) => y.maximum(&y.affine(LRELU_SLOPE, 0.0)?)?.affine(LRELU_GAIN * g, 0.0)?,
            None => y,
        })
    }

    /// Patch logits `[N, 1, h, w]`. With `detach_params`, no gradient flows
    /// into the discriminator weights (generator step).
    pub fn forward(&self, images: &Tensor, detach_params: bool) -> Result<Tensor> {
        let r0 = self.config.resolution;
        let (_, _, h, w) = images.dims4()?;
        if h != r0 || w != r0 {
            return Err(Error::shape(format!("discriminator expects {r0}x{r0}, got {h}x{w}")));
        }
        let images = images.to_dtype(self.store.dtype())?;
        let mut x = self.conv(&images, &format!("b{r0}.fromrgb"), Some(1.0), false, detach_params)?;
        let half = std::f64::consts::FRAC_1_SQRT_2;
        for r in self.config.block_resolutions() {
            let y = self.conv(&x, &format!("b{r}.skip"), None, true, detach_params)?.affine(half, 0.0)?;
            let z = self.conv(&x, &format!("b{r}.conv0"), Some(1.0), false, detach_params)?;
            let z = self.conv(&z, &format!("b{r}.conv1"), Some(half), true, detach_params)?;
            x = (y + z)?;
            if r == self.readoff {
                break;
            }
        }
        self.conv(&x, "patch_head", None, false, detach_params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn readoff_receptive_field_is_22() {
        for cfg in [DiscriminatorConfig::mini(), DiscriminatorConfig::ffhq("x")] {
            let (res, rf) = select_readoff(&cfg).unwrap();
            assert_eq!(rf, 22);
            assert_eq!(res, cfg.resolution / 2);
        }
    }

    #[test]
    fn patch_logits_shape() {
        let d = Discriminator::new(&DiscriminatorConfig::mini(), DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::zeros((2, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(d.forward(&x, false).unwrap().dims(), &[2, 1, 16, 16]);
    }

    #[test]
    fn readoff_pixel_influence_is_bounded_by_receptive_field() {
        // perturb one input pixel and count the patch logits that move;
        // logit (i, j) at stride 4 sees at most a 22-pixel window
        let d = Discriminator::new(&DiscriminatorConfig::mini(), DType::F64, &Device::Cpu).unwrap();
        let base = Tensor::zeros((1, 3, 64, 64), DType::F64, &Device::Cpu).unwrap();
        let mut v = vec![0.0f64; 3 * 64 * 64];
        v[32 * 64 + 32] = 1.0;
        let bumped = Tensor::from_vec(v, (1, 3, 64, 64), &Device::Cpu).unwrap();
        let a = d.forward(&base, false).unwrap();
        let b = d.forward(&bumped, false).unwrap();
        let diff = (b - a).unwrap().abs().unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let moved: Vec<usize> = (0..256).filter(|&i| diff[i] > 1e-12).collect();
        let rows: Vec<usize> = moved.iter().map(|i| i / 16).collect();
        let span = rows.iter().max().unwrap() - rows.iter().min().unwrap() + 1;
        assert!(span * 4 <= 22 + 4, "span {span}");
    }
}
