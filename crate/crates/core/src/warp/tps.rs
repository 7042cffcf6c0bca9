//! Thin-plate-spline interpolation from a control lattice to a dense grid.
//!
//! The spline fitted to control targets `p_i + d_i` is linear in the targets,
//! so the dense sampling grid is `M · (p + d)` for a fixed interpolation
//! matrix `M` (`[H·W, n]`). `M` reproduces affine maps exactly, which gives
//! `canonical + M · d`; the identity field yields the canonical lattice.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use candle_core::{DType, Device, Tensor};
use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};
use crate::warp::sample::canonical_points;

/// Diagonal regularizer added to the kernel matrix.
pub const KERNEL_REGULARIZER: f64 = 1e-6;

/// `U(r) = r² log r²`, evaluated on the squared distance.
pub fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// Evenly spaced `grid_h × grid_w` control lattice spanning `[-1, 1]²`, row-major.
pub fn control_lattice(grid_h: usize, grid_w: usize) -> Vec<[f64; 2]> {
    let lin = |k: usize, n: usize| -1.0 + 2.0 * k as f64 / (n - 1) as f64;
    let mut pts = Vec::with_capacity(grid_h * grid_w);
    for i in 0..grid_h {
        for j in 0..grid_w {
            pts.push([lin(j, grid_w), lin(i, grid_h)]);
        }
    }
    pts
}

#[derive(Debug, Clone)]
pub struct TpsSolver {
    control: Vec<[f64; 2]>,
    /// `(n + 3) × n` block of the inverted system used for interpolation.
    inverse: DMatrix<f64>,
}

impl TpsSolver {
    /// Fit the spline system for arbitrary control points.
    pub fn new(control: Vec<[f64; 2]>) -> Result<Self> {
        let n = control.len();
        if n < 3 {
            return Err(Error::SingularSystem(format!(
                "need at least 3 control points, got {n}"
            )));
        }
        for a in 0..n {
            for b in (a + 1)..n {
                let dx = control[a][0] - control[b][0];
                let dy = control[a][1] - control[b][1];
                if dx * dx + dy * dy < 1e-18 {
                    return Err(Error::SingularSystem(format!(
                        "control points {a} and {b} coincide"
                    )));
                }
            }
        }
        let mut affine = DMatrix::<f64>::zeros(n, 3);
        for (i, p) in control.iter().enumerate() {
            affine[(i, 0)] = 1.0;
            affine[(i, 1)] = p[0];
            affine[(i, 2)] = p[1];
        }
        let sv = SVD::new(affine.clone(), false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if smin <= smax * 1e-10 {
            return Err(Error::SingularSystem(
                "control points are collinear; affine part is rank deficient".into(),
            ));
        }

        let mut system = DMatrix::<f64>::zeros(n + 3, n + 3);
        for a in 0..n {
            for b in 0..n {
                let dx = control[a][0] - control[b][0];
                let dy = control[a][1] - control[b][1];
                system[(a, b)] = tps_kernel(dx * dx + dy * dy);
            }
            system[(a, a)] += KERNEL_REGULARIZER;
            for k in 0..3 {
                system[(a, n + k)] = affine[(a, k)];
                system[(n + k, a)] = affine[(a, k)];
            }
        }
        let inv = system
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::SingularSystem("kernel system is not invertible".into()))?;
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite inverse".into()));
        }
        let inverse = inv.columns(0, n).into_owned();
        Ok(Self { control, inverse })
    }

    pub fn lattice(grid_h: usize, grid_w: usize) -> Result<Self> {
        if grid_h < 2 || grid_w < 2 {
            return Err(Error::invalid(format!(
                "grid must be at least 2x2, got {grid_h}x{grid_w}"
            )));
        }
        Self::new(control_lattice(grid_h, grid_w))
    }

    pub fn control_points(&self) -> &[[f64; 2]] {
        &self.control
    }

    /// Interpolation weights of each query point over the control targets,
    /// row-major `[queries, n]`.
    pub fn interpolation_matrix(&self, queries: &[[f64; 2]]) -> DMatrix<f64> {
        let n = self.control.len();
        let mut basis = DMatrix::<f64>::zeros(queries.len(), n + 3);
        for (q, pt) in queries.iter().enumerate() {
            for (i, c) in self.control.iter().enumerate() {
                let dx = pt[0] - c[0];
                let dy = pt[1] - c[1];
                basis[(q, i)] = tps_kernel(dx * dx + dy * dy);
            }
            basis[(q, n)] = 1.0;
            basis[(q, n + 1)] = pt[0];
            basis[(q, n + 2)] = pt[1];
        }
        basis * &self.inverse
    }

    /// Map arbitrary target positions of the control points to the queries.
    pub fn transform(&self, targets: &[[f64; 2]], queries: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let m = self.interpolation_matrix(queries);
        (0..queries.len())
            .map(|q| {
                let mut acc = [0.0, 0.0];
                for (i, t) in targets.iter().enumerate() {
                    acc[0] += m[(q, i)] * t[0];
                    acc[1] += m[(q, i)] * t[1];
                }
                acc
            })
            .collect()
    }
}

type CacheKey = (usize, usize, usize, usize, DType, String);

fn cache() -> &'static Mutex<HashMap<CacheKey, Tensor>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Tensor>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn solver_cache() -> &'static Mutex<HashMap<(usize, usize), Arc<TpsSolver>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<TpsSolver>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

pub fn lattice_solver(grid_h: usize, grid_w: usize) -> Result<Arc<TpsSolver>> {
    let mut guard = solver_cache().lock().expect("tps solver cache poisoned");
    if let Some(s) = guard.get(&(grid_h, grid_w)) {
        return Ok(s.clone());
    }
    let solver = Arc::new(TpsSolver::lattice(grid_h, grid_w)?);
    guard.insert((grid_h, grid_w), solver.clone());
    Ok(solver)
}

/// Dense interpolation matrix `[h·w, grid_h·grid_w]` for the regular lattice
/// onto the pixel-center grid of an `h×w` map, cached per geometry and dtype.
pub fn dense_interpolation(
    grid_h: usize,
    grid_w: usize,
    h: usize,
    w: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let key = (grid_h, grid_w, h, w, dtype, format!("{:?}", device.location()));
    if let Some(t) = cache().lock().expect("tps cache poisoned").get(&key) {
        return Ok(t.clone());
    }
    let solver = lattice_solver(grid_h, grid_w)?;
    let m = solver.interpolation_matrix(&canonical_points(h, w));
    let n = grid_h * grid_w;
    let mut data = Vec::with_capacity(h * w * n);
    for q in 0..h * w {
        for i in 0..n {
            data.push(m[(q, i)]);
        }
    }
    let t = Tensor::from_vec(data, (h * w, n), device)?.to_dtype(dtype)?;
    cache()
        .lock()
        .expect("tps cache poisoned")
        .insert(key, t.clone());
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(tps_kernel(0.0), 0.0);
        assert!((tps_kernel(1.0)).abs() < 1e-15);
        assert!((tps_kernel(4.0) - 4.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reproduces_affine_maps() {
        let solver = TpsSolver::lattice(5, 4).unwrap();
        let f = |p: [f64; 2]| [0.3 + 1.1 * p[0] - 0.2 * p[1], -0.1 + 0.4 * p[0] + 0.9 * p[1]];
        let targets: Vec<_> = solver.control_points().iter().map(|&p| f(p)).collect();
        let queries = canonical_points(7, 6);
        let out = solver.transform(&targets, &queries);
        for (q, o) in queries.iter().zip(&out) {
            let e = f(*q);
            assert!((o[0] - e[0]).abs() < 1e-9 && (o[1] - e[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolates_control_targets() {
        let solver = TpsSolver::lattice(4, 4).unwrap();
        let mut targets = solver.control_points().to_vec();
        targets[5][0] += 0.2;
        targets[10][1] -= 0.1;
        let out = solver.transform(&targets, solver.control_points());
        for (o, t) in out.iter().zip(&targets) {
            assert!((o[0] - t[0]).abs() < 1e-5 && (o[1] - t[1]).abs() < 1e-5);
        }
    }

    #[test]
    fn duplicate_points_are_singular() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert!(matches!(TpsSolver::new(pts), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn collinear_points_are_singular() {
        let pts = vec![[0.0, 0.0], [0.5, 0.5], [1.0, 1.0], [-1.0, -1.0]];
        assert!(matches!(TpsSolver::new(pts), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(TpsSolver::lattice(1, 5).is_err());
    }
}
