//! Adam with explicit, serializable moment state.

use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    config: AdamConfig,
    steps: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            steps: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update over `params`; parameters without a gradient are untouched.
    pub fn step<'a, I>(&mut self, params: I, grads: &GradStore) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a Var)>,
    {
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, var) in params {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let m = match self.m.get(name) {
                Some(m) => ((m * beta1)? + (&g * (1.0 - beta1))?)?,
                None => (&g * (1.0 - beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?,
                None => (g.sqr()? * (1.0 - beta2))?,
            };
            let denom = ((&v / c2)?.sqrt()? + eps)?;
            let update = ((&m / c1)? / denom)?.affine(lr, 0.0)?;
            let next = (var.as_tensor().detach() - update)?;
            var.set(&next)?;
            self.m.insert(name.to_string(), m);
            self.v.insert(name.to_string(), v);
        }
        Ok(())
    }

    /// Moment tensors keyed `m.<param>` and `v.<param>`.
    pub fn state_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (k, t) in &self.m {
            out.insert(format!("m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("v.{k}"), t.clone());
        }
        out
    }

    pub fn from_state(config: AdamConfig, steps: u64, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut opt = Self::new(config);
        opt.steps = steps;
        for (k, t) in tensors {
            if let Some(name) = k.strip_prefix("m.") {
                opt.m.insert(name.to_string(), t);
            } else if let Some(name) = k.strip_prefix("v.") {
                opt.v.insert(name.to_string(), t);
            } else {
                return Err(Error::invalid(format!("unexpected optimizer tensor `{k}`")));
            }
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let x = Var::from_tensor(&Tensor::new(&[1.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(0.1));
        opt.step([("x", &x)], &grads).unwrap();
        let v = x.as_tensor().to_vec1::<f64>().unwrap();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] + 1.9).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn converges_on_quadratic() {
        let x = Var::zeros(3, DType::F64, &Device::Cpu).unwrap();
        let target = Tensor::new(&[0.5f64, -0.25, 1.0], &Device::Cpu).unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(0.05));
        for _ in 0..500 {
            let loss = (x.as_tensor() - &target).unwrap().sqr().unwrap().sum_all().unwrap();
            let g = loss.backward().unwrap();
            opt.step([("x", &x)], &g).unwrap();
        }
        let d = (x.as_tensor() - &target).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(d < 1e-3, "{d}");
    }

    #[test]
    fn state_roundtrip_continues_identically() {
        let run = |split: Option<usize>| {
            let x = Var::from_tensor(&Tensor::new(&[3.0f64], &Device::Cpu).unwrap()).unwrap();
            let mut opt = Adam::new(AdamConfig::with_lr(0.1));
            for i in 0..10 {
                if split == Some(i) {
                    opt = Adam::from_state(*opt.config(), opt.steps(), opt.state_tensors()).unwrap();
                }
                let g = x.as_tensor().sqr().unwrap().sum_all().unwrap().backward().unwrap();
                opt.step([("x", &x)], &g).unwrap();
            }
            x.as_tensor().to_vec1::<f64>().unwrap()[0]
        };
        assert_eq!(run(None).to_bits(), run(Some(4)).to_bits());
    }
}
