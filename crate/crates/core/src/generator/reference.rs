use std::collections::HashMap;

use candle_core::{DType, Tensor};

use crate::error::{Error, Result};
use crate::generator::latent::LatentCode;

/// The real/style reference images and their W+ codes in the frozen source
/// generator.
#[derive(Debug, Clone)]
pub struct ReferencePair {
    /// `[1, 3, R, R]`.
    pub source_image: Tensor,
    pub target_image: Tensor,
    pub w_ref_s: LatentCode,
    pub w_ref_t: LatentCode,
}

impl ReferencePair {
    pub fn new(source_image: Tensor, target_image: Tensor, w_ref_s: LatentCode, w_ref_t: LatentCode) -> Result<Self> {
        if source_image.dims() != target_image.dims() {
            return Err(Error::shape(format!(
                "reference images differ in shape: {:?} vs {:?}",
                source_image.dims(),
                target_image.dims()
            )));
        }
        Ok(Self {
            source_image,
            target_image,
            w_ref_s,
            w_ref_t,
        })
    }

    /// Tensors keyed `w_ref_s`, `w_ref_t`, `source_image`, `target_image`.
    pub fn tensors(&self) -> HashMap<String, Tensor> {
        HashMap::from([
            ("w_ref_s".to_string(), self.w_ref_s.tensor().detach()),
            ("w_ref_t".to_string(), self.w_ref_t.tensor().detach()),
            ("source_image".to_string(), self.source_image.detach()),
            ("target_image".to_string(), self.target_image.detach()),
        ])
    }

    pub fn from_tensors(tensors: &HashMap<String, Tensor>, dtype: DType) -> Result<Self> {
        let get = |k: &str| -> Result<Tensor> {
            Ok(tensors
                .get(k)
                .ok_or_else(|| Error::MissingTensor(k.to_string()))?
                .to_dtype(dtype)?)
        };
        Self::new(
            get("source_image")?,
            get("target_image")?,
            LatentCode::new(get("w_ref_s")?)?,
            LatentCode::new(get("w_ref_t")?)?,
        )
    }
}
