use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::warp::sample::{canonical_grid, grid_sample};
use crate::warp::tps::dense_interpolation;

pub const DEFAULT_GRID_SIZE: usize = 10;

/// TPS deformation: per-sample control-point displacements on a regular
/// `grid_h × grid_w` lattice in normalized coordinates.
///
/// `displacements` has shape `[N, grid_h, grid_w, 2]` with `(dx, dy)` in the
/// last axis. The dense sampling grid is derived on demand for a target
/// resolution via [`WarpField::dense_grid`].
#[derive(Debug, Clone)]
pub struct WarpField {
    displacements: Tensor,
    grid_h: usize,
    grid_w: usize,
}

impl WarpField {
    pub fn new(displacements: Tensor) -> Result<Self> {
        let dims = displacements.dims();
        if dims.len() != 4 || dims[3] != 2 {
            return Err(Error::shape(format!(
                "displacements must be [N, gh, gw, 2], got {dims:?}"
            )));
        }
        let (grid_h, grid_w) = (dims[1], dims[2]);
        if grid_h < 2 || grid_w < 2 {
            return Err(Error::invalid(format!(
                "grid must be at least 2x2, got {grid_h}x{grid_w}"
            )));
        }
        Ok(Self {
            displacements,
            grid_h,
            grid_w,
        })
    }

    pub fn displacements(&self) -> &Tensor {
        &self.displacements
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn batch(&self) -> usize {
        self.displacements.dims()[0]
    }

    pub fn dtype(&self) -> DType {
        self.displacements.dtype()
    }

    /// Per-pixel sampling coordinates `[N, h, w, 2]`.
    pub fn dense_grid(&self, h: usize, w: usize) -> Result<Tensor> {
        let dtype = self.displacements.dtype();
        let device = self.displacements.device();
        let n = self.batch();
        let m = dense_interpolation(self.grid_h, self.grid_w, h, w, dtype, device)?;
        let disp = self
            .displacements
            .reshape((n, self.grid_h * self.grid_w, 2))?;
        let offsets = m.broadcast_matmul(&disp)?;
        let base = canonical_grid(h, w, dtype, device)?.reshape((1, h * w, 2))?;
        Ok(offsets.broadcast_add(&base)?.reshape((n, h, w, 2))?)
    }

    /// Root-mean-square control displacement per sample.
    pub fn displacement_norms(&self) -> Result<Vec<f64>> {
        let n = self.batch();
        let sq = self
            .displacements
            .to_dtype(DType::F64)?
            .reshape((n, ()))?
            .sqr()?
            .mean(1)?
            .sqrt()?;
        Ok(sq.to_vec1::<f64>()?)
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Self::new(self.displacements.to_dtype(dtype)?)
    }
}

/// The no-deformation field: all displacements zero (batch of one).
pub fn make_identity_field(grid_h: usize, grid_w: usize) -> Result<WarpField> {
    make_identity_field_like(1, grid_h, grid_w, DType::F32, &Device::Cpu)
}

pub fn make_identity_field_like(
    batch: usize,
    grid_h: usize,
    grid_w: usize,
    dtype: DType,
    device: &Device,
) -> Result<WarpField> {
    if grid_h < 2 || grid_w < 2 {
        return Err(Error::invalid(format!(
            "grid must be at least 2x2, got {grid_h}x{grid_w}"
        )));
    }
    WarpField::new(Tensor::zeros((batch, grid_h, grid_w, 2), dtype, device)?)
}

/// Resample `features` (`[N, C, H, W]` or `[C, H, W]`) along the TPS field.
pub fn tps_warp(features: &Tensor, field: &WarpField) -> Result<Tensor> {
    let squeeze = features.rank() == 3;
    let x = if squeeze {
        features.unsqueeze(0)?
    } else {
        features.clone()
    };
    let (n, _, h, w) = x.dims4()?;
    if h < field.grid_h || w < field.grid_w {
        return Err(Error::shape(format!(
            "feature map {h}x{w} smaller than control grid {}x{}",
            field.grid_h, field.grid_w
        )));
    }
    let field = if field.batch() == n {
        field.clone()
    } else if field.batch() == 1 {
        WarpField::new(field.displacements.broadcast_as((n, field.grid_h, field.grid_w, 2))?.contiguous()?)?
    } else {
        return Err(Error::shape(format!(
            "field batch {} does not match feature batch {n}",
            field.batch()
        )));
    };
    let grid = field.to_dtype(x.dtype())?.dense_grid(h, w)?;
    let out = grid_sample(&x, &grid)?;
    Ok(if squeeze { out.squeeze(0)? } else { out })
}

/// `(1 − α)·base + α·target`, elementwise on control displacements.
/// α outside `[0, 1]` extrapolates and is logged.
pub fn interpolate_field(base: &WarpField, target: &WarpField, alpha: f64) -> Result<WarpField> {
    if base.grid_h != target.grid_h || base.grid_w != target.grid_w {
        return Err(Error::shape(format!(
            "grid {}x{} vs {}x{}",
            base.grid_h, base.grid_w, target.grid_h, target.grid_w
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        log::warn!("interpolating warp fields with alpha = {alpha} (extrapolation)");
    }
    let b = base.displacements.to_dtype(target.dtype())?;
    let t = &target.displacements;
    let b = if b.dims() == t.dims() {
        b
    } else {
        b.broadcast_as(t.dims())?.contiguous()?
    };
    let mixed = (b.affine(1.0 - alpha, 0.0)? + t.affine(alpha, 0.0)?)?;
    WarpField::new(mixed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_map(seed: u64, shape: (usize, usize, usize, usize)) -> Tensor {
        let mut init = crate::params::Initializer::new(seed);
        let len = shape.0 * shape.1 * shape.2 * shape.3;
        Tensor::from_vec(init.normal_vec(len, 1.0), shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn batched_dense_grid_matches_per_sample() {
        let d = random_map(9, (3, 5, 5, 2)).affine(0.05, 0.0).unwrap();
        let batched = WarpField::new(d.clone()).unwrap().dense_grid(12, 12).unwrap();
        for i in 0..3 {
            let single = WarpField::new(d.narrow(0, i, 1).unwrap()).unwrap().dense_grid(12, 12).unwrap();
            let diff = (batched.narrow(0, i, 1).unwrap() - single).unwrap().abs().unwrap();
            assert_eq!(diff.max_all().unwrap().to_scalar::<f64>().unwrap(), 0.0);
        }
    }

    #[test]
    fn identity_field_has_zero_displacements() {
        let f = make_identity_field(10, 10).unwrap();
        assert_eq!(f.displacements().dims(), &[1, 10, 10, 2]);
        let total = f.displacements().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(total, 0.0);
    }

    #[test]
    fn identity_field_dense_grid_is_canonical() {
        let f = make_identity_field_like(1, 10, 10, DType::F64, &Device::Cpu).unwrap();
        let grid = f.dense_grid(12, 12).unwrap();
        let canon = canonical_grid(12, 12, DType::F64, &Device::Cpu).unwrap().unsqueeze(0).unwrap();
        let diff = (grid - canon).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn identity_warp_is_exact() {
        let x = random_map(3, (2, 4, 16, 16));
        let f = make_identity_field_like(2, 10, 10, DType::F64, &Device::Cpu).unwrap();
        let y = tps_warp(&x, &f).unwrap();
        let diff = (y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn uniform_shift_moves_one_column() {
        let (h, w) = (8usize, 8usize);
        let x = random_map(11, (1, 2, h, w));
        let disp = Tensor::from_vec([2.0 / w as f64, 0.0].repeat(64), (1, 8, 8, 2), &Device::Cpu)
            .unwrap();
        let y = tps_warp(&x, &WarpField::new(disp).unwrap()).unwrap();
        // brute-force pixel shift oracle: out[i, j] = in[i, min(j + 1, w - 1)]
        let xs = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let ys = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for c in 0..2 {
            for i in 0..h {
                for j in 0..w {
                    let e = xs[c * h * w + i * w + (j + 1).min(w - 1)];
                    let o = ys[c * h * w + i * w + j];
                    assert!((e - o).abs() < 1e-9, "c{c} i{i} j{j}: {o} vs {e}");
                }
            }
        }
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let base = make_identity_field_like(1, 4, 4, DType::F64, &Device::Cpu).unwrap();
        let t = WarpField::new(random_map(5, (1, 4, 4, 2))).unwrap();
        let at0 = interpolate_field(&base, &t, 0.0).unwrap();
        let at1 = interpolate_field(&base, &t, 1.0).unwrap();
        let mid = interpolate_field(&base, &t, 0.5).unwrap();
        let v = |f: &WarpField| f.displacements().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(v(&at0).iter().all(|a| *a == 0.0));
        assert_eq!(v(&at1), v(&t));
        for (m, tv) in v(&mid).iter().zip(v(&t)) {
            assert!((m - 0.5 * tv).abs() < 1e-15);
        }
    }

    #[test]
    fn interpolation_rejects_grid_mismatch() {
        let a = make_identity_field(4, 4).unwrap();
        let b = make_identity_field(5, 4).unwrap();
        assert!(matches!(interpolate_field(&a, &b, 0.5), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn rejects_small_grids() {
        assert!(make_identity_field(1, 10).is_err());
        assert!(make_identity_field(10, 1).is_err());
    }
}
