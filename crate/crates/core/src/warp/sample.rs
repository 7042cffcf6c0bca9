//! Bilinear resampling of feature maps at normalized sampling coordinates.
//!
//! Coordinates follow the `(x, y)` convention with `-1`/`1` at the outer
//! edges of the border pixels (pixel centers at `(2j + 1) / W - 1`).
//! Out-of-range coordinates are clamped to the border.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// Pixel-center lattice of an `h×w` map, shape `[h, w, 2]`.
pub fn canonical_grid(h: usize, w: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = Vec::with_capacity(h * w * 2);
    for i in 0..h {
        let y = (2 * i + 1) as f64 / h as f64 - 1.0;
        for j in 0..w {
            let x = (2 * j + 1) as f64 / w as f64 - 1.0;
            data.push(x);
            data.push(y);
        }
    }
    Ok(Tensor::from_vec(data, (h, w, 2), device)?.to_dtype(dtype)?)
}

/// Canonical lattice coordinates as plain `(x, y)` pairs in row-major order.
pub fn canonical_points(h: usize, w: usize) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(h * w);
    for i in 0..h {
        let y = (2 * i + 1) as f64 / h as f64 - 1.0;
        for j in 0..w {
            let x = (2 * j + 1) as f64 / w as f64 - 1.0;
            pts.push([x, y]);
        }
    }
    pts
}

/// Sample `input` (`[N, C, H, W]`) at `grid` (`[N, Ho, Wo, 2]`), giving
/// `[N, C, Ho, Wo]`. Differentiable with respect to both arguments.
pub fn grid_sample(input: &Tensor, grid: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let (gn, ho, wo, two) = grid.dims4()?;
    if gn != n || two != 2 {
        return Err(Error::shape(format!(
            "grid {:?} does not match input {:?}",
            grid.dims(),
            input.dims()
        )));
    }
    let grid = grid.to_dtype(input.dtype())?;
    let p = ho * wo;
    let gx = grid.narrow(3, 0, 1)?.reshape((n, 1, p))?;
    let gy = grid.narrow(3, 1, 1)?.reshape((n, 1, p))?;

    let ix = ((gx + 1.0)? * (w as f64 / 2.0))?.affine(1.0, -0.5)?;
    let iy = ((gy + 1.0)? * (h as f64 / 2.0))?.affine(1.0, -0.5)?;
    let ix = ix.clamp(0.0, (w - 1) as f64)?;
    let iy = iy.clamp(0.0, (h - 1) as f64)?;

    let x0 = ix.detach().floor()?;
    let y0 = iy.detach().floor()?;
    let x1 = (&x0 + 1.0)?.clamp(0.0, (w - 1) as f64)?;
    let y1 = (&y0 + 1.0)?.clamp(0.0, (h - 1) as f64)?;

    let wx1 = (&ix - &x0)?;
    let wy1 = (&iy - &y0)?;
    let wx0 = wx1.affine(-1.0, 1.0)?;
    let wy0 = wy1.affine(-1.0, 1.0)?;

    let flat = input.reshape((n, c, h * w))?;
    let gather = |yy: &Tensor, xx: &Tensor| -> Result<Tensor> {
        let idx = ((yy * w as f64)? + xx)?
            .to_dtype(DType::F64)?
            .to_dtype(DType::U32)?
            .broadcast_as((n, c, p))?
            .contiguous()?;
        Ok(flat.gather(&idx, 2)?)
    };
    let v00 = gather(&y0, &x0)?;
    let v01 = gather(&y0, &x1)?;
    let v10 = gather(&y1, &x0)?;
    let v11 = gather(&y1, &x1)?;

    let top = (v00.broadcast_mul(&(&wy0 * &wx0)?)? + v01.broadcast_mul(&(&wy0 * &wx1)?)?)?;
    let bottom = (v10.broadcast_mul(&(&wy1 * &wx0)?)? + v11.broadcast_mul(&(&wy1 * &wx1)?)?)?;
    let out = (top + bottom)?;
    Ok(out.reshape((n, c, ho, wo))?)
}

/// Apply per-sample affine matrices `theta` (`[N, 2, 3]`) to a grid of
/// coordinates (`[N, H, W, 2]`), yielding `theta · [x, y, 1]ᵀ`.
pub fn apply_affine(theta: &Tensor, grid: &Tensor) -> Result<Tensor> {
    let (n, h, w, _) = grid.dims4()?;
    let pts = grid.reshape((n, h * w, 2))?;
    let ones = Tensor::ones((n, h * w, 1), grid.dtype(), grid.device())?;
    let homo = Tensor::cat(&[&pts, &ones], 2)?;
    let out = homo.matmul(&theta.to_dtype(grid.dtype())?.transpose(1, 2)?)?;
    Ok(out.reshape((n, h, w, 2))?)
}

/// Sampling grid for `theta` over an `h×w` output lattice.
pub fn affine_grid(theta: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let n = theta.dim(0)?;
    let base = canonical_grid(h, w, theta.dtype(), theta.device())?
        .unsqueeze(0)?
        .broadcast_as((n, h, w, 2))?
        .contiguous()?;
    apply_affine(theta, &base)
}
