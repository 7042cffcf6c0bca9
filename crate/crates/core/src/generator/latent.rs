use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::generator::config::{LATENT_DIM, LATENT_ROWS};

/// A W+ code: 18 rows of 512 values. Rows are numbered from 1 in mixing
/// splits.
#[derive(Debug, Clone)]
pub struct LatentCode {
    rows: Tensor,
}

impl LatentCode {
    pub fn new(rows: Tensor) -> Result<Self> {
        if rows.dims() != [LATENT_ROWS, LATENT_DIM] {
            return Err(Error::shape(format!(
                "latent code must be [{LATENT_ROWS}, {LATENT_DIM}], got {:?}",
                rows.dims()
            )));
        }
        Ok(Self { rows })
    }

    /// Repeat a single `[512]` vector into every row.
    pub fn broadcast(w: &Tensor) -> Result<Self> {
        let w = w.flatten_all()?;
        if w.dim(0)? != LATENT_DIM {
            return Err(Error::shape(format!("expected a {LATENT_DIM}-vector, got {:?}", w.dims())));
        }
        Self::new(w.unsqueeze(0)?.broadcast_as((LATENT_ROWS, LATENT_DIM))?.contiguous()?)
    }

    pub fn zeros(dtype: DType, device: &Device) -> Result<Self> {
        Self::new(Tensor::zeros((LATENT_ROWS, LATENT_DIM), dtype, device)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.rows
    }

    /// Row `index` (1-based).
    pub fn row(&self, index: usize) -> Result<Tensor> {
        if !(1..=LATENT_ROWS).contains(&index) {
            return Err(Error::invalid(format!("row {index} outside 1..={LATENT_ROWS}")));
        }
        Ok(self.rows.get(index - 1)?)
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Self::new(self.rows.to_dtype(dtype)?)
    }

    pub fn detach(&self) -> Self {
        Self {
            rows: self.rows.detach(),
        }
    }

    /// Sample `index` of a `[N, 18, 512]` batch.
    pub fn from_batch(batch: &Tensor, index: usize) -> Result<Self> {
        Self::new(batch.get(index)?)
    }

    /// `[N, 18, 512]` batch.
    pub fn stack(codes: &[LatentCode]) -> Result<Tensor> {
        if codes.is_empty() {
            return Err(Error::invalid("cannot stack zero latent codes"));
        }
        let rows: Vec<&Tensor> = codes.iter().map(|c| &c.rows).collect();
        Ok(Tensor::stack(&rows, 0)?)
    }

    pub fn to_vec(&self) -> Result<Vec<Vec<f32>>> {
        Ok(self.rows.to_dtype(DType::F32)?.to_vec2::<f32>()?)
    }

    pub fn style_mix(&self, reference: &LatentCode, split: usize) -> Result<LatentCode> {
        style_mix(self, reference, split)
    }
}

fn check_split(split: usize) -> Result<()> {
    if !(1..=LATENT_ROWS).contains(&split) {
        return Err(Error::invalid(format!("style-mix split {split} outside 1..={LATENT_ROWS}")));
    }
    Ok(())
}

/// Rows `1..split` from `w`, rows `split..=18` from `reference`.
pub fn style_mix(w: &LatentCode, reference: &LatentCode, split: usize) -> Result<LatentCode> {
    let mixed = style_mix_batch(&w.rows.unsqueeze(0)?, &reference.rows, split)?;
    LatentCode::new(mixed.squeeze(0)?)
}

/// Batched form: `ws` is `[N, 18, 512]`, `reference` is `[18, 512]` or
/// `[N, 18, 512]`.
pub fn style_mix_batch(ws: &Tensor, reference: &Tensor, split: usize) -> Result<Tensor> {
    check_split(split)?;
    let (n, rows, dim) = ws.dims3()?;
    let reference = if reference.rank() == 2 {
        reference.unsqueeze(0)?.broadcast_as((n, rows, dim))?
    } else {
        reference.clone()
    };
    if reference.dims() != [n, rows, dim] {
        return Err(Error::shape(format!(
            "reference {:?} does not match codes {:?}",
            reference.dims(),
            ws.dims()
        )));
    }
    let reference = reference.to_dtype(ws.dtype())?;
    let keep = split - 1;
    if keep == 0 {
        return Ok(reference.contiguous()?);
    }
    let head = ws.narrow(1, 0, keep)?;
    let tail = reference.narrow(1, keep, rows - keep)?;
    Ok(Tensor::cat(&[&head, &tail], 1)?)
}

/// Standard normal `[n, 512]` draws from a ChaCha stream.
pub fn sample_z(rng: &mut ChaCha8Rng, n: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let v: Vec<f32> = (0..n * LATENT_DIM)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Ok(Tensor::from_vec(v, (n, LATENT_DIM), device)?.to_dtype(dtype)?)
}

pub fn seeded_z(seed: u64, dtype: DType, device: &Device) -> Result<Tensor> {
    sample_z(&mut ChaCha8Rng::seed_from_u64(seed), 1, dtype, device)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(offset: f32) -> LatentCode {
        let v: Vec<f32> = (0..LATENT_ROWS * LATENT_DIM).map(|i| i as f32 + offset).collect();
        LatentCode::new(Tensor::from_vec(v, (LATENT_ROWS, LATENT_DIM), &Device::Cpu).unwrap()).unwrap()
    }

    #[test]
    fn self_mix_is_identity() {
        let w = code(0.0);
        assert_eq!(w.style_mix(&w, 9).unwrap().to_vec().unwrap(), w.to_vec().unwrap());
    }

    #[test]
    fn split_one_takes_reference() {
        let (w, r) = (code(0.0), code(0.5));
        assert_eq!(w.style_mix(&r, 1).unwrap().to_vec().unwrap(), r.to_vec().unwrap());
    }

    #[test]
    fn split_outside_range_is_rejected() {
        let w = code(0.0);
        assert!(w.style_mix(&w, 0).is_err());
        assert!(w.style_mix(&w, 19).is_err());
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let t = Tensor::zeros((10, 512), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(LatentCode::new(t), Err(Error::ShapeMismatch(_))));
    }
}
