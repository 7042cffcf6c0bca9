//! Adapted-model bundles: one tar archive holding `manifest.json`,
//! `weights.safetensors` (target generator), `refs.safetensors` (reference
//! images and codes) and `losses.csv`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::adaptation::{TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::generator::{Generator, ReferencePair};
use crate::objectives::LossRecord;
use crate::params::ParamStore;

pub const BUNDLE_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const WEIGHTS: &str = "weights.safetensors";
const REFS: &str = "refs.safetensors";
const LOSSES: &str = "losses.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub style: String,
    pub steps: u64,
    pub config: TrainConfig,
    pub weights: String,
    pub refs: String,
    pub model_hash: String,
    pub source_generator_hash: String,
}

pub struct Bundle {
    pub manifest: Manifest,
    generator: Generator,
    refs: ReferencePair,
    losses: Vec<LossRecord>,
}

fn serialize_tensors(tensors: BTreeMap<String, Tensor>) -> Result<Vec<u8>> {
    let tensors: Vec<(String, Tensor)> = tensors
        .into_iter()
        .map(|(k, t)| Ok((k, t.contiguous()?)))
        .collect::<Result<_>>()?;
    Ok(safetensors::serialize(tensors.iter().map(|(k, t)| (k.as_str(), t)), None)?)
}

impl Bundle {
    pub fn from_trainer(trainer: &Trainer, style: impl Into<String>) -> Result<Self> {
        let store = trainer.target_generator().store().deep_clone()?;
        let mut store = store;
        store.freeze();
        let generator = Generator::from_store(&trainer.config().generator, store)?;
        let manifest = Manifest {
            version: BUNDLE_VERSION,
            style: style.into(),
            steps: trainer.step(),
            config: trainer.config().clone(),
            weights: WEIGHTS.into(),
            refs: REFS.into(),
            model_hash: generator.store().content_hash()?,
            source_generator_hash: trainer.source_generator().base_hash()?,
        };
        Ok(Self {
            manifest,
            generator,
            refs: trainer.references().clone(),
            losses: trainer.history().to_vec(),
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn references(&self) -> &ReferencePair {
        &self.refs
    }

    pub fn losses(&self) -> &[LossRecord] {
        &self.losses
    }

    pub fn config(&self) -> &TrainConfig {
        &self.manifest.config
    }

    /// Rebuild the frozen source generator from the bundled config and check
    /// it is the one the bundle was adapted from.
    pub fn source_generator(&self) -> Result<Generator> {
        let g = Generator::load(&self.manifest.config.generator, self.generator.dtype(), self.generator.device())?;
        if g.base_hash()? != self.manifest.source_generator_hash {
            return Err(Error::Bundle(
                "source generator rebuilt from the bundle config does not match the recorded hash".into(),
            ));
        }
        Ok(g)
    }

    /// Write the archive atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let mut entries: Vec<(&str, Vec<u8>)> = vec![
            (MANIFEST, serde_json::to_vec_pretty(&self.manifest)?),
            (WEIGHTS, serialize_tensors(self.generator.store().tensors())?),
            (REFS, serialize_tensors(self.refs.tensors().into_iter().collect())?),
        ];
        let mut csv_bytes = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut csv_bytes);
            if self.losses.is_empty() {
                w.write_record(crate::objectives::LOSS_COLUMNS)?;
            }
            for r in &self.losses {
                w.serialize(r)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        entries.push((LOSSES, csv_bytes));

        let tmp = path.with_extension("tmp");
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut builder = tar::Builder::new(file);
        for (name, bytes) in &entries {
            let mut header = tar::Header::new_gnu();
            header.set_size(bytes.len() as u64);
            header.set_mode(0o644);
            header.set_mtime(0);
            header.set_cksum();
            builder
                .append_data(&mut header, name, bytes.as_slice())
                .map_err(|e| Error::io(&tmp, e))?;
        }
        builder.into_inner().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut archive = tar::Archive::new(file);
        let mut files: HashMap<String, Vec<u8>> = HashMap::new();
        for entry in archive.entries().map_err(|e| Error::io(path, e))? {
            let mut entry = entry.map_err(|e| Error::io(path, e))?;
            let name = entry.path().map_err(|e| Error::io(path, e))?.to_string_lossy().into_owned();
            let mut bytes = Vec::new();
            entry.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
            files.insert(name, bytes);
        }
        let take = |name: &str| -> Result<&Vec<u8>> {
            files
                .get(name)
                .ok_or_else(|| Error::Bundle(format!("{} has no `{name}` entry", path.display())))
        };
        let manifest: Manifest = serde_json::from_slice(take(MANIFEST)?)?;
        if manifest.version != BUNDLE_VERSION {
            return Err(Error::Bundle(format!(
                "bundle version {} is not supported (expected {BUNDLE_VERSION})",
                manifest.version
            )));
        }
        let weights = candle_core::safetensors::load_buffer(take(&manifest.weights)?, device)?;
        let mut store = ParamStore::from_tensors(weights, DType::F32, device)?;
        store.freeze();
        if store.content_hash()? != manifest.model_hash {
            return Err(Error::Bundle(format!("weights in {} do not match the manifest hash", path.display())));
        }
        let generator = Generator::from_store(&manifest.config.generator, store)?;
        let refs = ReferencePair::from_tensors(&candle_core::safetensors::load_buffer(take(&manifest.refs)?, device)?, DType::F32)?;
        let losses = match files.get(LOSSES) {
            Some(bytes) => csv::Reader::from_reader(bytes.as_slice())
                .deserialize()
                .map(|r| r.map_err(Error::from))
                .collect::<Result<Vec<LossRecord>>>()?,
            None => Vec::new(),
        };
        Ok(Self {
            manifest,
            generator,
            refs,
            losses,
        })
    }
}
