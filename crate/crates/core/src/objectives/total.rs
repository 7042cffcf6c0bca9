use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_direct: f64,
    pub lambda_cons: f64,
    pub lambda_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_direct: 6.0,
            lambda_cons: 5e4,
            lambda_reg: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_direct", self.lambda_direct),
            ("lambda_cons", self.lambda_cons),
            ("lambda_reg", self.lambda_reg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scalar loss tensors of one generator step.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub adv: Tensor,
    pub direct: Tensor,
    pub cons: Tensor,
    pub reg: Tensor,
}

impl LossParts {
    fn named(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("L_adv", &self.adv),
            ("L_direct", &self.direct),
            ("L_cons", &self.cons),
            ("L_reg", &self.reg),
        ]
    }

    /// Fails on the first non-finite component, naming it.
    pub fn check_finite(&self) -> Result<()> {
        for (term, t) in self.named() {
            let value = scalar(t)?;
            if !value.is_finite() {
                return Err(Error::NonFinite { term, value });
            }
        }
        Ok(())
    }
}

/// `L_adv + λ_direct·L_direct + λ_cons·L_cons + λ_reg·L_reg`.
pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Result<Tensor> {
    parts.check_finite()?;
    let t = (&parts.adv
        + parts.direct.affine(weights.lambda_direct, 0.0)?
            .add(&parts.cons.affine(weights.lambda_cons, 0.0)?)?
            .add(&parts.reg.affine(weights.lambda_reg, 0.0)?)?)?;
    let value = scalar(&t)?;
    if !value.is_finite() {
        return Err(Error::NonFinite { term: "L_total", value });
    }
    Ok(t)
}
