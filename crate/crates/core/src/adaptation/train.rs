use std::path::Path;

use candle_core::{backprop::GradStore, DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adaptation::checkpoint::{self, CheckpointState};
use crate::adaptation::config::TrainConfig;
use crate::adaptation::discriminator::Discriminator;
use crate::adaptation::references::{prepare_references, ReferenceFeatures};
use crate::error::{Error, Result};
use crate::generator::{style_mix_batch, Deform, Generator, ReferencePair};
use crate::objectives::{
    consistency_loss, directional_loss, discriminator_loss, generator_loss, similarity_distribution, total_loss,
    Domain, LossParts, LossRecord,
};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::semantics::{self_similarity_batch, Encoder, Level};
use crate::warp::smoothness_regularizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamGroup {
    Generator,
    TpsStn,
    BasicStn,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Generator, ParamGroup::TpsStn, ParamGroup::BasicStn];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Generator => "generator",
            ParamGroup::TpsStn => "tps_stn",
            ParamGroup::BasicStn => "basic_stn",
        }
    }
}

/// Optimizer group of a target-generator tensor; `None` for constants that
/// are never trained (mapping network, noise buffers, `w_avg`).
pub fn param_group(name: &str) -> Option<ParamGroup> {
    if name.contains(".transform.tps.") {
        Some(ParamGroup::TpsStn)
    } else if name.contains(".transform.basic.") {
        Some(ParamGroup::BasicStn)
    } else if name.starts_with("synthesis.") && !name.ends_with(".noise_const") {
        Some(ParamGroup::Generator)
    } else {
        None
    }
}

pub(crate) struct Optimizers {
    pub groups: Vec<(ParamGroup, Adam)>,
    pub discriminator: Adam,
}

impl Optimizers {
    fn new(cfg: &TrainConfig) -> Self {
        let make = |lr: f64| {
            Adam::new(AdamConfig {
                lr,
                beta1: cfg.adam_beta1,
                beta2: cfg.adam_beta2,
                eps: cfg.adam_eps,
            })
        };
        Self {
            groups: vec![
                (ParamGroup::Generator, make(cfg.lr_generator)),
                (ParamGroup::TpsStn, make(cfg.lr_tps_stn)),
                (ParamGroup::BasicStn, make(cfg.lr_basic_stn)),
            ],
            discriminator: make(cfg.lr_discriminator),
        }
    }
}

pub(crate) fn group_config(cfg: &TrainConfig, group: Option<ParamGroup>) -> AdamConfig {
    let lr = match group {
        Some(ParamGroup::Generator) => cfg.lr_generator,
        Some(ParamGroup::TpsStn) => cfg.lr_tps_stn,
        Some(ParamGroup::BasicStn) => cfg.lr_basic_stn,
        None => cfg.lr_discriminator,
    };
    AdamConfig {
        lr,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Generator-step losses and the stylized batch they were computed on.
pub struct GeneratorObjective {
    pub parts: LossParts,
    pub total: Tensor,
    pub image: Tensor,
}

/// Few-shot adaptation state: frozen source generator, trainable target
/// generator with Transforms, patch discriminator and optimizers.
pub struct Trainer {
    config: TrainConfig,
    g_s: Generator,
    g_t: Generator,
    d: Discriminator,
    encoder: Encoder,
    refs: ReferencePair,
    features: ReferenceFeatures,
    optim: Optimizers,
    step: u64,
    history: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig, g_s: Generator, encoder: Encoder, refs: ReferencePair) -> Result<Self> {
        config.validate()?;
        if !g_s.is_frozen() {
            return Err(Error::invalid("source generator must be frozen"));
        }
        let g_t = g_s.clone_for_adaptation()?;
        let d = Discriminator::new(&config.discriminator, g_s.dtype(), g_s.device())?;
        Self::assemble(config, g_s, g_t, d, encoder, refs, None, 0, Vec::new())
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        config: TrainConfig,
        g_s: Generator,
        g_t: Generator,
        d: Discriminator,
        encoder: Encoder,
        refs: ReferencePair,
        optim: Option<Optimizers>,
        step: u64,
        history: Vec<LossRecord>,
    ) -> Result<Self> {
        let features = ReferenceFeatures::compute(
            &encoder,
            &refs.source_image,
            &refs.target_image,
            &config.direction_levels,
            config.consistency_level,
        )?;
        let optim = optim.unwrap_or_else(|| Optimizers::new(&config));
        Ok(Self {
            config,
            g_s,
            g_t,
            d,
            encoder,
            refs,
            features,
            optim,
            step,
            history,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn source_generator(&self) -> &Generator {
        &self.g_s
    }

    pub fn target_generator(&self) -> &Generator {
        &self.g_t
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.d
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn references(&self) -> &ReferencePair {
        &self.refs
    }

    pub fn features(&self) -> &ReferenceFeatures {
        &self.features
    }

    /// Completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub(crate) fn optimizers(&self) -> &Optimizers {
        &self.optim
    }

    pub fn into_target_generator(self) -> Generator {
        self.g_t
    }

    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.step);
        rng
    }

    fn levels(&self) -> Vec<Level> {
        let mut levels = self.config.direction_levels.clone();
        if !levels.contains(&self.config.consistency_level) {
            levels.push(self.config.consistency_level);
        }
        levels
    }

    fn flat_tokens(tokens: &std::collections::BTreeMap<Level, Tensor>, levels: &[Level]) -> Result<Tensor> {
        let parts: Vec<Tensor> = levels
            .iter()
            .map(|l| {
                let t = &tokens[l];
                let n = t.dim(0)?;
                Ok(t.reshape((n, ()))?)
            })
            .collect::<Result<_>>()?;
        Ok(Tensor::cat(&parts, 1)?)
    }

    /// Generator-side losses for the current step's batch, with the graph
    /// attached to the target generator. Nothing is updated.
    pub fn generator_objective(&self) -> Result<GeneratorObjective> {
        let cfg = &self.config;
        let n = cfg.batch_size;
        let mut rng = self.step_rng();
        let w = self.g_s.sample_latents(&mut rng, n, cfg.truncation)?;
        let w_s = style_mix_batch(&w, self.refs.w_ref_s.tensor(), cfg.style_mix_split)?;
        let w_t = style_mix_batch(&w, self.refs.w_ref_t.tensor(), cfg.style_mix_split)?;

        let img_s = self.g_s.synthesize_batch(&w_s, Deform::Off)?.detach();
        let out_t = self.g_t.forward(&w_t, Deform::On)?;
        let img_t = out_t.image;

        let levels = self.levels();
        let tok_s = self.encoder.encode(&img_s, &levels)?;
        let tok_t = self.encoder.encode(&img_t, &levels)?;
        let d_w = (Self::flat_tokens(&tok_t, &cfg.direction_levels)?
            - Self::flat_tokens(&tok_s, &cfg.direction_levels)?.detach())?;
        let d_ref = self.features.d_ref.unsqueeze(0)?.to_dtype(d_w.dtype())?;
        let direct = directional_loss(&d_w, &d_ref)?;

        let desc_s = self_similarity_batch(&tok_s[&cfg.consistency_level])?.detach();
        let desc_t = self_similarity_batch(&tok_t[&cfg.consistency_level])?;
        let dist_s = similarity_distribution(&desc_s, &self.features.desc_source, cfg.temperature, Domain::Source)?;
        let dist_t = similarity_distribution(&desc_t, &self.features.desc_target, cfg.temperature, Domain::Target)?;
        let cons = consistency_loss(&dist_s, &dist_t)?;

        let mut reg = Tensor::zeros((), img_t.dtype(), img_t.device())?;
        for t in &out_t.transforms {
            reg = (reg + smoothness_regularizer(&t.field)?)?;
        }

        let adv = generator_loss(&self.d.forward(&img_t, true)?)?;
        let parts = LossParts { adv, direct, cons, reg };
        let total = total_loss(&parts, &cfg.weights)?;
        Ok(GeneratorObjective {
            parts,
            total,
            image: img_t,
        })
    }

    /// One generator update followed by one discriminator update.
    pub fn train_step(&mut self) -> Result<LossRecord> {
        let GeneratorObjective { parts, total, image } = self.generator_objective()?;
        let img_t = &image;
        let grads = total.backward()?;
        self.apply_generator_grads(&grads)?;

        let fake = img_t.detach();
        let real = self.refs.target_image.to_dtype(fake.dtype())?;
        let d_loss = discriminator_loss(&self.d.forward(&real, false)?, &self.d.forward(&fake, false)?)?;
        let adv_d = scalar(&d_loss)?;
        if !adv_d.is_finite() {
            return Err(Error::NonFinite {
                term: "L_adv_D",
                value: adv_d,
            });
        }
        let d_grads = d_loss.backward()?;
        let store = self.d.store();
        self.optim.discriminator.step(store.vars(), &d_grads)?;

        self.step += 1;
        let record = LossRecord {
            step: self.step,
            adv_g: scalar(&parts.adv)?,
            adv_d,
            direct: scalar(&parts.direct)?,
            cons: scalar(&parts.cons)?,
            reg: scalar(&parts.reg)?,
            total: scalar(&total)?,
        };
        if self.config.log_every > 0 && self.step % self.config.log_every as u64 == 0 {
            log::info!(
                "step {}: total {:.4} adv_g {:.4} adv_d {:.4} direct {:.4} cons {:.3e} reg {:.3e}",
                record.step,
                record.total,
                record.adv_g,
                record.adv_d,
                record.direct,
                record.cons,
                record.reg
            );
        }
        self.history.push(record);
        Ok(record)
    }

    fn apply_generator_grads(&mut self, grads: &GradStore) -> Result<()> {
        let store: &ParamStore = self.g_t.store();
        for (group, opt) in self.optim.groups.iter_mut() {
            let params = store.vars().filter(|(name, _)| param_group(name) == Some(*group));
            opt.step(params, grads)?;
        }
        Ok(())
    }

    /// Train until `config.iterations` steps are done, checkpointing under
    /// `checkpoint_dir` every `checkpoint_every` steps and at the end.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>) -> Result<()> {
        let total = self.config.iterations as u64;
        while self.step < total {
            self.train_step()?;
            if let Some(dir) = checkpoint_dir {
                let every = self.config.checkpoint_every as u64;
                if (every > 0 && self.step % every == 0) || self.step == total {
                    checkpoint::save(self, dir)?;
                }
            }
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<std::path::PathBuf> {
        checkpoint::save(self, dir)
    }

    /// Restore the latest checkpoint under `dir`.
    pub fn resume(dir: &Path, device: &Device) -> Result<Self> {
        let state: CheckpointState = checkpoint::load_latest(dir, device)?;
        state.into_trainer()
    }
}

/// Prepare references from raw images and run a full adaptation.
pub fn run_adaptation(
    source_image: &Tensor,
    target_image: &Tensor,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<Trainer> {
    config.validate()?;
    let device = source_image.device().clone();
    let g_s = Generator::load(&config.generator, DType::F32, &device)?;
    let encoder = config.semantics.build(DType::F32, &device)?;
    let perceptual = config.perceptual.build(DType::F32, &device)?;
    let prepared = prepare_references(
        source_image,
        target_image,
        &g_s,
        perceptual.as_ref(),
        &encoder,
        &config.inversion,
        &config.direction_levels,
        config.consistency_level,
    )?;
    let mut trainer = Trainer::new(config.clone(), g_s, encoder, prepared.pair)?;
    trainer.run(checkpoint_dir)?;
    Ok(trainer)
}
