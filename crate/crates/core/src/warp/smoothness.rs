//! Smoothness penalty on TPS warping fields.
//!
//! For every lattice node with both a left and an upper neighbor:
//! `2 − sim(F[i, j−1], F[i, j]) − sim(F[i−1, j], F[i, j])`, where `F` is the
//! displacement vector at the node and `sim` is cosine similarity. Pairs
//! involving a zero vector count as parallel (similarity 1).

use candle_core::{DType, Tensor, D};

use crate::error::Result;
use crate::warp::field::WarpField;

/// Vectors shorter than this are treated as zero.
pub const ZERO_VECTOR_EPS: f64 = 1e-12;

fn masked_cosine(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let eps2 = ZERO_VECTOR_EPS * ZERO_VECTOR_EPS;
    let sa = a.sqr()?.sum_keepdim(D::Minus1)?;
    let sb = b.sqr()?.sum_keepdim(D::Minus1)?;
    let valid = sa.detach().ge(eps2)?.mul(&sb.detach().ge(eps2)?)?.to_dtype(a.dtype())?.squeeze(D::Minus1)?;
    // normalize each side separately; a single product denominator underflows in f32
    let ua = a.broadcast_div(&sa.maximum(eps2)?.sqrt()?)?;
    let ub = b.broadcast_div(&sb.maximum(eps2)?.sqrt()?)?;
    let cos = (ua * ub)?.sum(D::Minus1)?;
    // identical vectors are exactly parallel, without rounding in the norms
    let same = a.eq(b)?.to_dtype(a.dtype())?.min(D::Minus1)?;
    let cos = ((&same + (same.affine(-1.0, 1.0)? * cos)?)?).contiguous()?;
    // valid · cos + (1 − valid)
    Ok(((&valid * cos)? + valid.affine(-1.0, 1.0)?)?)
}

/// Per-sample penalty, shape `[N]`.
pub fn smoothness_per_sample(field: &WarpField) -> Result<Tensor> {
    let f = field.displacements();
    let (gh, gw) = (field.grid_h(), field.grid_w());
    let center = f.narrow(1, 1, gh - 1)?.narrow(2, 1, gw - 1)?;
    let left = f.narrow(1, 1, gh - 1)?.narrow(2, 0, gw - 1)?;
    let up = f.narrow(1, 0, gh - 1)?.narrow(2, 1, gw - 1)?;
    let horiz = masked_cosine(&left, &center)?;
    let vert = masked_cosine(&up, &center)?;
    let terms = (horiz + vert)?.affine(-1.0, 2.0)?;
    Ok(terms.sum(D::Minus1)?.sum(D::Minus1)?)
}

/// Batch mean of the per-sample penalty (the plain sum for a single field).
pub fn smoothness_regularizer(field: &WarpField) -> Result<Tensor> {
    Ok(smoothness_per_sample(field)?.mean(0)?)
}

/// Scalar convenience for reporting.
pub fn smoothness_value(field: &WarpField) -> Result<f64> {
    Ok(smoothness_regularizer(field)?
        .to_dtype(DType::F64)?
        .to_scalar::<f64>()?)
}
