use std::collections::BTreeMap;

use candle_core::{DType, Tensor};

use crate::backends::PerceptualNet;
use crate::error::{Error, Result};
use crate::generator::{invert_reference, style_mix, Generator, InversionConfig, LatentCode, ReferencePair};
use crate::semantics::{direction_from_tokens, self_similarity_batch, Encoder, Level};

/// Reference-side quantities fixed for a whole run.
#[derive(Debug, Clone)]
pub struct ReferenceFeatures {
    /// `[D]`, tokens(target) − tokens(source) over the direction levels.
    pub d_ref: Tensor,
    /// Self-similarity descriptors `[K]` of the raw reference images.
    pub desc_source: Tensor,
    pub desc_target: Tensor,
}

impl ReferenceFeatures {
    pub fn compute(
        encoder: &Encoder,
        source: &Tensor,
        target: &Tensor,
        direction_levels: &[Level],
        consistency_level: Level,
    ) -> Result<Self> {
        let mut levels: Vec<Level> = direction_levels.to_vec();
        if !levels.contains(&consistency_level) {
            levels.push(consistency_level);
        }
        let ts = detach_all(encoder.encode(source, &levels)?);
        let tt = detach_all(encoder.encode(target, &levels)?);
        let d_ref = direction_from_tokens(&ts, &tt, direction_levels)?.values.flatten_all()?;
        let norm = d_ref.sqr()?.sum_all()?.sqrt()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !(norm >= crate::objectives::MIN_DIRECTION_NORM) {
            return Err(Error::ZeroNorm(format!(
                "reference pair has no structural direction (|d_ref| = {norm:.3e}); the two images encode identically"
            )));
        }
        let desc_source = self_similarity_batch(&ts[&consistency_level])?.flatten_all()?;
        let desc_target = self_similarity_batch(&tt[&consistency_level])?.flatten_all()?;
        Ok(Self {
            d_ref,
            desc_source,
            desc_target,
        })
    }
}

fn detach_all(m: BTreeMap<Level, Tensor>) -> BTreeMap<Level, Tensor> {
    m.into_iter().map(|(k, v)| (k, v.detach())).collect()
}

#[derive(Debug, Clone)]
pub struct PreparedReferences {
    pub pair: ReferencePair,
    pub features: ReferenceFeatures,
    pub source_inversion_loss: f64,
    pub target_inversion_loss: f64,
}

/// Validate the pair, compute the fixed reference features, and invert both
/// images into the frozen source generator.
pub fn prepare_references(
    source_image: &Tensor,
    target_image: &Tensor,
    g_s: &Generator,
    perceptual: &dyn PerceptualNet,
    encoder: &Encoder,
    inversion: &InversionConfig,
    direction_levels: &[Level],
    consistency_level: Level,
) -> Result<PreparedReferences> {
    let r = g_s.config().output_resolution;
    for (name, img) in [("source", source_image), ("target", target_image)] {
        if img.dims() != [1, 3, r, r] {
            return Err(Error::shape(format!(
                "{name} reference must be [1, 3, {r}, {r}], got {:?}",
                img.dims()
            )));
        }
    }
    let source_image = source_image.to_dtype(g_s.dtype())?;
    let target_image = target_image.to_dtype(g_s.dtype())?;
    let features = ReferenceFeatures::compute(encoder, &source_image, &target_image, direction_levels, consistency_level)?;
    let inv_s = invert_reference(&source_image, g_s, perceptual, inversion)?;
    let inv_t = invert_reference(&target_image, g_s, perceptual, inversion)?;
    log::info!(
        "inverted references: source loss {:.4} -> {:.4}, target loss {:.4} -> {:.4}",
        inv_s.initial_loss,
        inv_s.best_loss,
        inv_t.initial_loss,
        inv_t.best_loss
    );
    Ok(PreparedReferences {
        pair: ReferencePair::new(source_image, target_image, inv_s.latent, inv_t.latent)?,
        features,
        source_inversion_loss: inv_s.best_loss,
        target_inversion_loss: inv_t.best_loss,
    })
}

/// Color alignment: fine rows of `w` replaced by each reference code.
pub fn color_align(w: &LatentCode, refs: &ReferencePair, split: usize) -> Result<(LatentCode, LatentCode)> {
    Ok((style_mix(w, &refs.w_ref_s, split)?, style_mix(w, &refs.w_ref_t, split)?))
}
