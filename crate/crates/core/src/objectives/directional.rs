use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};
use crate::semantics::DirectionalVector;

/// Vectors with norm below this have no direction.
pub const MIN_DIRECTION_NORM: f64 = 1e-12;

fn check_norms(norms: &Tensor, what: &str) -> Result<()> {
    let v = norms.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    if let Some(i) = v.iter().position(|n| !(*n >= MIN_DIRECTION_NORM)) {
        return Err(Error::ZeroNorm(format!(
            "{what} direction {i} has norm {:.3e}; the cosine is undefined",
            v[i]
        )));
    }
    Ok(())
}

/// Batch mean of `1 − cos(d_w[i], d_ref)`. `d_w` is `[N, D]` or `[D]`,
/// `d_ref` is `[D]` or `[1, D]`.
pub fn directional_loss(d_w: &Tensor, d_ref: &Tensor) -> Result<Tensor> {
    let dw = if d_w.rank() == 1 { d_w.unsqueeze(0)? } else { d_w.clone() };
    let dr = d_ref.flatten_all()?.to_dtype(dw.dtype())?;
    let (_, len) = dw.dims2()?;
    if dr.dim(0)? != len {
        return Err(Error::shape(format!(
            "direction lengths differ: {len} vs {}",
            dr.dim(0)?
        )));
    }
    let nw = dw.sqr()?.sum(D::Minus1)?.sqrt()?;
    let nr = dr.sqr()?.sum_all()?.sqrt()?;
    check_norms(&nw, "generated")?;
    check_norms(&nr, "reference")?;
    let dot = dw.broadcast_mul(&dr.unsqueeze(0)?)?.sum(D::Minus1)?;
    let cos = dot.broadcast_div(&nw.broadcast_mul(&nr)?)?;
    Ok(cos.affine(-1.0, 1.0)?.mean(0)?)
}

pub fn directional_loss_vectors(d_w: &DirectionalVector, d_ref: &DirectionalVector) -> Result<Tensor> {
    if d_w.levels != d_ref.levels {
        return Err(Error::invalid(format!(
            "level mixtures differ: {:?} vs {:?}",
            d_w.levels, d_ref.levels
        )));
    }
    directional_loss(&d_w.values, &d_ref.values)
}
