use std::collections::BTreeMap;

use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};
use crate::semantics::encoder::{Encoder, Level, TokenMatrix};

/// Rows with norm below this are rejected by [`self_similarity`].
pub const MIN_TOKEN_NORM: f64 = 1e-8;

/// Flattened `n_patches²` cosine self-similarity of one token matrix.
#[derive(Debug, Clone)]
pub struct StructureDescriptor {
    pub values: Tensor,
}

/// Concatenated per-level token differences, `[N, D]`.
#[derive(Debug, Clone)]
pub struct DirectionalVector {
    pub values: Tensor,
    pub levels: Vec<Level>,
}

/// Levels mixed into directional vectors.
pub const DIRECTION_LEVELS: [Level; 2] = [Level::M, Level::H];

pub fn self_similarity(tokens: &TokenMatrix) -> Result<StructureDescriptor> {
    let v = self_similarity_batch(&tokens.tokens.unsqueeze(0)?)?;
    Ok(StructureDescriptor { values: v.squeeze(0)? })
}

/// `[N, P, d] -> [N, P²]`, entry `(i, j)` = cos(tᵢ, tⱼ).
pub fn self_similarity_batch(tokens: &Tensor) -> Result<Tensor> {
    let (n, p, _) = tokens.dims3()?;
    let norms = tokens.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let min = norms.min_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !(min >= MIN_TOKEN_NORM) {
        let flat = norms.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let idx = flat.iter().position(|v| !(*v >= MIN_TOKEN_NORM)).unwrap_or(0);
        return Err(Error::ZeroNorm(format!(
            "token row {} of sample {} has norm {:.3e}",
            idx % p,
            idx / p,
            flat[idx]
        )));
    }
    let unit = tokens.broadcast_div(&norms)?;
    let gram = unit.matmul(&unit.transpose(1, 2)?.contiguous()?)?;
    Ok(gram.reshape((n, p * p))?)
}

/// Flatten per-level token differences `b − a` and concatenate them.
pub fn direction_from_tokens(
    a: &BTreeMap<Level, Tensor>,
    b: &BTreeMap<Level, Tensor>,
    levels: &[Level],
) -> Result<DirectionalVector> {
    let mut parts = Vec::with_capacity(levels.len());
    for l in levels {
        let ta = a.get(l).ok_or_else(|| Error::invalid(format!("level {l} missing from source tokens")))?;
        let tb = b.get(l).ok_or_else(|| Error::invalid(format!("level {l} missing from target tokens")))?;
        let n = tb.dim(0)?;
        let na = ta.dim(0)?;
        let d = if na == n {
            (tb - ta)?
        } else if na == 1 {
            tb.broadcast_sub(ta)?
        } else {
            return Err(Error::shape(format!("token batches {na} and {n}")));
        };
        parts.push(d.reshape((n, ()))?);
    }
    if parts.is_empty() {
        return Err(Error::invalid("no levels for the directional vector"));
    }
    Ok(DirectionalVector {
        values: Tensor::cat(&parts, 1)?,
        levels: levels.to_vec(),
    })
}

/// Structural change from `image_a` to `image_b` in token space.
pub fn deformation_direction(
    encoder: &Encoder,
    image_a: &Tensor,
    image_b: &Tensor,
    levels: &[Level],
) -> Result<DirectionalVector> {
    let a = encoder.encode(image_a, levels)?;
    let b = encoder.encode(image_b, levels)?;
    direction_from_tokens(&a, &b, levels)
}
