//! Training checkpoints. Each checkpoint is a directory written under a
//! temporary name and renamed into place; `latest` names the newest one.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::adaptation::config::TrainConfig;
use crate::adaptation::discriminator::Discriminator;
use crate::adaptation::train::{group_config, Optimizers, ParamGroup, Trainer};
use crate::error::{Error, Result};
use crate::generator::{Generator, ReferencePair};
use crate::objectives::{read_loss_csv, write_loss_csv, LossRecord};
use crate::optim::Adam;
use crate::params::ParamStore;

pub const FORMAT_VERSION: u32 = 1;
pub const LATEST: &str = "latest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub step: u64,
    pub seed: u64,
    pub config_hash: String,
    pub source_generator_hash: String,
    pub optimizer_steps: BTreeMap<String, u64>,
}

fn save_tensors(path: &Path, tensors: HashMap<String, Tensor>) -> Result<()> {
    let tensors: HashMap<String, Tensor> = tensors
        .into_iter()
        .map(|(k, t)| Ok((k, t.contiguous()?)))
        .collect::<Result<_>>()?;
    candle_core::safetensors::save(&tensors, path)?;
    Ok(())
}

fn load_tensors(path: &Path, device: &Device) -> Result<HashMap<String, Tensor>> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(candle_core::safetensors::load(path, device)?)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn optimizer_file(name: &str) -> String {
    format!("optim_{name}.safetensors")
}

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint-{step:06}")
}

/// Write a checkpoint for the trainer's current step and point `latest` at it.
pub fn save(trainer: &Trainer, root: &Path) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let name = checkpoint_name(trainer.step());
    let fin = root.join(&name);
    let tmp = root.join(format!("{name}.tmp"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;

    let cfg = trainer.config();
    let optim = trainer.optimizers();
    let mut optimizer_steps = BTreeMap::new();
    for (group, opt) in &optim.groups {
        optimizer_steps.insert(group.name().to_string(), opt.steps());
        save_tensors(&tmp.join(optimizer_file(group.name())), opt.state_tensors().into_iter().collect())?;
    }
    optimizer_steps.insert("discriminator".to_string(), optim.discriminator.steps());
    save_tensors(
        &tmp.join(optimizer_file("discriminator")),
        optim.discriminator.state_tensors().into_iter().collect(),
    )?;
    save_tensors(&tmp.join("generator.safetensors"), trainer.target_generator().store().tensors().into_iter().collect())?;
    save_tensors(&tmp.join("discriminator.safetensors"), trainer.discriminator().store().tensors().into_iter().collect())?;
    save_tensors(&tmp.join("refs.safetensors"), trainer.references().tensors())?;
    write_loss_csv(&tmp.join("losses.csv"), trainer.history())?;
    let cfg_path = tmp.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml_string()?).map_err(|e| Error::io(&cfg_path, e))?;
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        step: trainer.step(),
        seed: cfg.seed,
        config_hash: cfg.hash()?,
        source_generator_hash: trainer.source_generator().base_hash()?,
        optimizer_steps,
    };
    let meta_path = tmp.join("state.json");
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;

    if fin.exists() {
        fs::remove_dir_all(&fin).map_err(|e| Error::io(&fin, e))?;
    }
    fs::rename(&tmp, &fin).map_err(|e| Error::io(&fin, e))?;
    write_atomic(&root.join(LATEST), name.as_bytes())?;
    log::info!("checkpoint written to {}", fin.display());
    Ok(fin)
}

/// Directory of the newest complete checkpoint under `root`.
pub fn latest(root: &Path) -> Result<PathBuf> {
    let pointer = root.join(LATEST);
    if !pointer.exists() {
        return Err(Error::MissingCheckpoint(pointer));
    }
    let name = fs::read_to_string(&pointer).map_err(|e| Error::io(&pointer, e))?;
    let dir = root.join(name.trim());
    if !dir.join("state.json").exists() {
        return Err(Error::MissingCheckpoint(dir));
    }
    Ok(dir)
}

/// Everything needed to continue training.
pub struct CheckpointState {
    pub meta: CheckpointMeta,
    pub config: TrainConfig,
    generator: ParamStore,
    discriminator: ParamStore,
    refs: ReferencePair,
    optim: Optimizers,
    history: Vec<LossRecord>,
}

pub fn load_latest(root: &Path, device: &Device) -> Result<CheckpointState> {
    load_dir(&latest(root)?, device)
}

pub fn load_dir(dir: &Path, device: &Device) -> Result<CheckpointState> {
    let meta_path = dir.join("state.json");
    let meta_bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Config(format!(
            "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    let config = TrainConfig::load(&dir.join("config.toml"))?;
    if config.hash()? != meta.config_hash {
        return Err(Error::Config(format!("config in {} does not match its recorded hash", dir.display())));
    }
    let dtype = DType::F32;
    let generator = ParamStore::from_tensors(load_tensors(&dir.join("generator.safetensors"), device)?, dtype, device)?;
    let discriminator =
        ParamStore::from_tensors(load_tensors(&dir.join("discriminator.safetensors"), device)?, dtype, device)?;
    let refs = ReferencePair::from_tensors(&load_tensors(&dir.join("refs.safetensors"), device)?, dtype)?;
    let steps = |name: &str| -> Result<u64> {
        meta.optimizer_steps
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("checkpoint has no step count for optimizer `{name}`")))
    };
    let load_opt = |name: &str, group: Option<ParamGroup>| -> Result<Adam> {
        let tensors = load_tensors(&dir.join(optimizer_file(name)), device)?;
        Adam::from_state(group_config(&config, group), steps(name)?, tensors.into_iter().collect())
    };
    let mut groups = Vec::new();
    for g in ParamGroup::ALL {
        groups.push((g, load_opt(g.name(), Some(g))?));
    }
    let optim = Optimizers {
        groups,
        discriminator: load_opt("discriminator", None)?,
    };
    let history = read_loss_csv(&dir.join("losses.csv"))?;
    Ok(CheckpointState {
        meta,
        config,
        generator,
        discriminator,
        refs,
        optim,
        history,
    })
}

impl CheckpointState {
    /// Rebuild the trainer; the source generator is reconstructed from the
    /// config and must hash to the recorded value.
    pub fn into_trainer(self) -> Result<Trainer> {
        let device = self.generator.device().clone();
        let g_s = Generator::load(&self.config.generator, DType::F32, &device)?;
        if g_s.base_hash()? != self.meta.source_generator_hash {
            return Err(Error::Config("source generator differs from the one used for this checkpoint".into()));
        }
        let g_t = Generator::from_store(&self.config.generator, self.generator)?;
        let d = Discriminator::from_store(&self.config.discriminator, self.discriminator)?;
        let encoder = self.config.semantics.build(DType::F32, &device)?;
        Trainer::assemble(
            self.config,
            g_s,
            g_t,
            d,
            encoder,
            self.refs,
            Some(self.optim),
            self.meta.step,
            self.history,
        )
    }
}
