//! Named parameter storage shared by every network in the crate.
//!
//! Every tensor lives in a [`Var`] so the same store can back a frozen network
//! (reads are detached) or a trainable one (reads are tracked by autograd).
//! Names follow the community checkpoint layout, so a store can be filled from
//! a safetensors file or from a deterministic random initializer.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How a parameter is initialized when no checkpoint provides it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    Normal(f64),
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

/// Deterministic tensor factory backed by a ChaCha stream.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal_vec(&mut self, len: usize, std: f64) -> Vec<f64> {
        (0..len)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal) * std)
            .collect()
    }

    pub fn tensor(&mut self, spec: &ParamSpec, dtype: DType, device: &Device) -> Result<Tensor> {
        let len: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Zeros => vec![0.0; len],
            Init::Const(v) => vec![v; len],
            Init::Normal(std) => self.normal_vec(len, std),
        };
        Ok(Tensor::from_vec(data, spec.shape.as_slice(), device)?.to_dtype(dtype)?)
    }
}

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    frozen: bool,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            frozen: false,
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    /// Insert (or overwrite) a parameter, converting to the store dtype.
    pub fn insert(&mut self, name: impl Into<String>, tensor: &Tensor) -> Result<()> {
        let tensor = tensor.to_dtype(self.dtype)?.to_device(&self.device)?;
        self.vars.insert(name.into(), Var::from_tensor(&tensor)?);
        Ok(())
    }

    /// Fill every missing spec from the initializer; existing entries are kept.
    pub fn init_missing(&mut self, specs: &[ParamSpec], init: &mut Initializer) -> Result<()> {
        for spec in specs {
            if !self.contains(&spec.name) {
                let t = init.tensor(spec, self.dtype, &self.device)?;
                self.insert(spec.name.clone(), &t)?;
            }
        }
        Ok(())
    }

    /// Check that every spec is present with the declared shape.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            let var = self
                .vars
                .get(&spec.name)
                .ok_or_else(|| Error::MissingTensor(spec.name.clone()))?;
            if var.dims() != spec.shape.as_slice() {
                return Err(Error::shape(format!(
                    "{}: expected {:?}, found {:?}",
                    spec.name,
                    spec.shape,
                    var.dims()
                )));
            }
        }
        Ok(())
    }

    /// Tensor handle for building a network. Frozen stores hand out detached
    /// tensors, so no gradient is ever recorded for them.
    pub fn get(&self, name: &str) -> Result<Tensor> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        Ok(if self.frozen {
            var.as_tensor().detach()
        } else {
            var.as_tensor().clone()
        })
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Overwrite the value of an existing parameter in place.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Independent copy: fresh storage for every tensor.
    pub fn deep_clone(&self) -> Result<Self> {
        let mut out = Self::new(self.dtype, &self.device);
        for (name, var) in &self.vars {
            out.insert(name.clone(), &var.as_tensor().copy()?)?;
        }
        Ok(out)
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let mut out = Self::new(dtype, &self.device);
        for (name, var) in &self.vars {
            out.insert(name.clone(), var.as_tensor())?;
        }
        out.frozen = self.frozen;
        Ok(out)
    }

    /// Detached snapshot of every tensor, keyed by name.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().detach()))
            .collect()
    }

    pub fn tensors_with_prefix(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.as_tensor().detach()))
            .collect()
    }

    pub fn from_tensors<I>(tensors: I, dtype: DType, device: &Device) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Tensor)>,
    {
        let mut store = Self::new(dtype, device);
        for (name, t) in tensors {
            store.insert(name, &t)?;
        }
        Ok(store)
    }

    /// SHA-256 over names, shapes and little-endian f32 values, in name order.
    pub fn content_hash(&self) -> Result<String> {
        hash_tensors(self.vars.iter().map(|(k, v)| (k.as_str(), v.as_tensor())))
    }
}

pub fn hash_tensors<'a, I>(tensors: I) -> Result<String>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let mut hasher = Sha256::new();
    for (name, t) in tensors {
        hasher.update(name.as_bytes());
        for d in t.dims() {
            hasher.update((*d as u64).to_le_bytes());
        }
        let values = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        for v in values {
            hasher.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(hasher.finalize()))
}
