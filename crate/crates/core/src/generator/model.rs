use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generator::config::{GeneratorConfig, LATENT_DIM, LATENT_ROWS};
use crate::generator::latent::{sample_z, seeded_z, LatentCode};
use crate::generator::layers::{mapping_forward, mapping_specs, synthesis_layer, synthesis_specs, torgb_layer};
use crate::generator::transform::{transform_specs, Deform, Transform, TransformOutput};
use crate::nn::upsample2x;
use crate::params::{Initializer, ParamSpec, ParamStore};

/// Seed offset for Transform initialization, kept apart from the base weights.
const TRANSFORM_SEED_OFFSET: u64 = 0x5452_4e53;
/// Samples averaged for the mean latent of a randomly initialized mapping.
const W_AVG_SAMPLES: usize = 2048;

#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    /// `[N, 3, R, R]`, nominally in `[-1, 1]`.
    pub image: Tensor,
    pub transforms: Vec<TransformOutput>,
}

pub struct Generator {
    config: GeneratorConfig,
    store: ParamStore,
    with_transforms: bool,
}

impl Generator {
    /// Source generator: loaded from the checkpoint, or randomly initialized
    /// in mini mode. The returned generator is frozen.
    pub fn load(config: &GeneratorConfig, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut store = if config.mini_mode {
            let mut store = ParamStore::new(dtype, device);
            let mut init = Initializer::new(config.seed);
            store.init_missing(&Self::base_specs(config), &mut init)?;
            let w_avg = estimate_w_avg(&store, config)?;
            store.set("mapping.w_avg", &w_avg)?;
            store
        } else {
            let path = config
                .checkpoint
                .as_deref()
                .ok_or_else(|| Error::Config("no checkpoint configured".into()))?;
            load_checkpoint(path, config, dtype, device)?
        };
        store.freeze();
        Ok(Self {
            config: config.clone(),
            store,
            with_transforms: false,
        })
    }

    /// Rebuild a generator from stored weights (e.g. an adapted bundle).
    pub fn from_store(config: &GeneratorConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        store.validate(&Self::base_specs(config))?;
        let with_transforms = config
            .transform_resolutions
            .iter()
            .any(|r| store.contains(&format!("{}.tps.fc1.weight", crate::generator::transform_prefix(*r))));
        if with_transforms {
            store.validate(&transform_specs(config))?;
        }
        Ok(Self {
            config: config.clone(),
            store,
            with_transforms,
        })
    }

    pub fn base_specs(config: &GeneratorConfig) -> Vec<ParamSpec> {
        let mut s = mapping_specs(config);
        s.extend(synthesis_specs(config));
        s
    }

    /// Independent trainable copy with fresh identity Transforms inserted at
    /// every configured resolution.
    pub fn clone_for_adaptation(&self) -> Result<Self> {
        let mut store = self.store.deep_clone()?;
        let mut init = Initializer::new(self.config.seed.wrapping_add(TRANSFORM_SEED_OFFSET));
        store.init_missing(&transform_specs(&self.config), &mut init)?;
        Ok(Self {
            config: self.config.clone(),
            store,
            with_transforms: true,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn is_frozen(&self) -> bool {
        self.store.is_frozen()
    }

    pub fn has_transforms(&self) -> bool {
        self.with_transforms
    }

    /// Number of STN heads: one basic and one TPS per Transform.
    pub fn stn_count(&self) -> usize {
        if self.with_transforms {
            2 * self.config.transform_resolutions.len()
        } else {
            0
        }
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Ok(Self {
            config: self.config.clone(),
            store: self.store.to_dtype(dtype)?,
            with_transforms: self.with_transforms,
        })
    }

    /// Hash over the non-Transform weights.
    pub fn base_hash(&self) -> Result<String> {
        let specs = Self::base_specs(&self.config);
        let tensors: Vec<(String, Tensor)> = specs
            .iter()
            .map(|s| Ok((s.name.clone(), self.store.get(&s.name)?)))
            .collect::<Result<_>>()?;
        crate::params::hash_tensors(tensors.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn mean_latent(&self) -> Result<Tensor> {
        self.store.get("mapping.w_avg")
    }

    /// `z [N, 512]` to truncated `w [N, 512]`.
    pub fn map(&self, z: &Tensor, truncation: f64) -> Result<Tensor> {
        check_truncation(truncation)?;
        let w = mapping_forward(&self.store, &self.config, &z.to_dtype(self.dtype())?)?;
        let avg = self.mean_latent()?.unsqueeze(0)?;
        Ok(w.broadcast_sub(&avg)?.affine(truncation, 0.0)?.broadcast_add(&avg)?)
    }

    /// Deterministic code for `seed`: normal draw, mapping, truncation,
    /// broadcast to every row.
    pub fn sample_latent(&self, seed: u64, truncation: f64) -> Result<LatentCode> {
        let z = seeded_z(seed, self.dtype(), self.device())?;
        LatentCode::broadcast(&self.map(&z, truncation)?)
    }

    /// `[n, 18, 512]` batch of codes from an RNG stream.
    pub fn sample_latents(&self, rng: &mut ChaCha8Rng, n: usize, truncation: f64) -> Result<Tensor> {
        let z = sample_z(rng, n, self.dtype(), self.device())?;
        let w = self.map(&z, truncation)?;
        Ok(w.unsqueeze(1)?.broadcast_as((n, LATENT_ROWS, LATENT_DIM))?.contiguous()?)
    }

    pub fn synthesize(&self, w: &LatentCode, deform: Deform) -> Result<Tensor> {
        let ws = w.tensor().unsqueeze(0)?;
        self.synthesize_batch(&ws, deform)
    }

    pub fn synthesize_batch(&self, ws: &Tensor, deform: Deform) -> Result<Tensor> {
        Ok(self.forward(ws, deform)?.image)
    }

    /// Full forward pass over `ws [N, 18, 512]`.
    pub fn forward(&self, ws: &Tensor, deform: Deform) -> Result<SynthesisOutput> {
        let (n, rows, dim) = ws.dims3().map_err(|_| Error::shape(format!("latent batch {:?}", ws.dims())))?;
        if rows != LATENT_ROWS || dim != LATENT_DIM {
            return Err(Error::shape(format!(
                "latent batch must be [N, {LATENT_ROWS}, {LATENT_DIM}], got {:?}",
                ws.dims()
            )));
        }
        let ws = ws.to_dtype(self.dtype())?;
        let row = |i: usize| -> Result<Tensor> { Ok(ws.narrow(1, i, 1)?.squeeze(1)?) };
        let alpha = deform.alpha();
        let active = self.with_transforms && alpha != 0.0;
        let clamp = self.config.conv_clamp;

        let c = self.store.get("synthesis.b4.const")?;
        let (c4, _, _) = c.dims3()?;
        let mut x = c.unsqueeze(0)?.broadcast_as((n, c4, 4, 4))?.contiguous()?;
        x = synthesis_layer(&self.store, "synthesis.b4.conv1", &x, &row(0)?, false, clamp)?;
        let mut img = torgb_layer(&self.store, "synthesis.b4.torgb", &x, &row(1)?, clamp)?;
        let mut transforms = Vec::new();
        for r in self.config.resolutions().into_iter().skip(1) {
            let idx = 2 * r.trailing_zeros() as usize - 5;
            let p = format!("synthesis.b{r}");
            x = synthesis_layer(&self.store, &format!("{p}.conv0"), &x, &row(idx)?, true, clamp)?;
            x = synthesis_layer(&self.store, &format!("{p}.conv1"), &x, &row(idx + 1)?, false, clamp)?;
            img = upsample2x(&img)?;
            img = (img + torgb_layer(&self.store, &format!("{p}.torgb"), &x, &row(idx + 2)?, clamp)?)?;
            if active && self.config.transform_resolutions.contains(&r) {
                let t = Transform::load(&self.store, &self.config, r)?;
                let (xw, iw, out) = t.forward(&x, &img, alpha)?;
                x = xw;
                img = iw;
                transforms.push(out);
            }
        }
        Ok(SynthesisOutput { image: img, transforms })
    }
}

fn check_truncation(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid(format!("truncation {t} outside (0, 1]")));
    }
    Ok(())
}

fn estimate_w_avg(store: &ParamStore, config: &GeneratorConfig) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7761_7667);
    let z = sample_z(&mut rng, W_AVG_SAMPLES, store.dtype(), store.device())?;
    Ok(mapping_forward(store, config, &z)?.mean(0)?)
}

/// Read a safetensors checkpoint in the community layout. Tensors outside the
/// generator layout (filters, discriminator, EMA bookkeeping) are ignored.
pub fn load_checkpoint(path: &Path, config: &GeneratorConfig, dtype: DType, device: &Device) -> Result<ParamStore> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    let tensors = candle_core::safetensors::load(path, device)?;
    let specs = Generator::base_specs(config);
    let mut store = ParamStore::new(dtype, device);
    for spec in &specs {
        let t = tensors
            .get(&spec.name)
            .ok_or_else(|| Error::MissingTensor(spec.name.clone()))?;
        store.insert(spec.name.clone(), t)?;
    }
    store.validate(&specs)?;
    Ok(store)
}
