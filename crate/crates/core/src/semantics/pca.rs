use candle_core::{DType, Tensor};
use image::{Rgb, RgbImage};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::semantics::encoder::{Encoder, Level};

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// Leading principal axes as rows, `[k, d]`.
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Variance fraction of each kept component.
    pub explained_variance_ratio: Vec<f64>,
}

impl Pca {
    /// Fit on the rows of `data` (`[samples, d]`), keeping up to `k`
    /// components with non-negligible variance.
    pub fn fit(data: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (rows, d) = data.shape();
        if rows < 2 {
            return Err(Error::invalid("PCA needs at least two samples"));
        }
        if k == 0 || k > d {
            return Err(Error::invalid(format!("components must be in 1..={d}, got {k}")));
        }
        let mean = data.row_mean().transpose();
        let mut centered = data.clone();
        for mut r in centered.row_iter_mut() {
            r -= mean.transpose();
        }
        let cov = (centered.transpose() * &centered) / (rows as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        let top = eig.eigenvalues[order[0]].max(0.0);
        let available = order
            .iter()
            .take_while(|&&i| top > 0.0 && eig.eigenvalues[i] > RANK_TOL * top)
            .count();
        let kept = k.min(available);
        if kept < k {
            log::warn!("token covariance has rank {available}; using {kept} of {k} requested components");
        }
        let mut components = DMatrix::zeros(kept, d);
        let mut eigenvalues = Vec::with_capacity(kept);
        for (row, &i) in order.iter().take(kept).enumerate() {
            components.set_row(row, &eig.eigenvectors.column(i).transpose());
            eigenvalues.push(eig.eigenvalues[i]);
        }
        let explained_variance_ratio = eigenvalues
            .iter()
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect();
        Ok(Self {
            mean,
            components,
            eigenvalues,
            explained_variance_ratio,
        })
    }

    /// Scores `[samples, k]`.
    pub fn project(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = data.clone();
        for mut r in centered.row_iter_mut() {
            r -= self.mean.transpose();
        }
        centered * self.components.transpose()
    }
}

pub fn tensor_to_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    let (r, c) = t.dims2()?;
    let v = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok(DMatrix::from_row_slice(r, c, &v))
}

pub struct PcaVisualization {
    /// One map per input image, `(side·patch)²` pixels.
    pub maps: Vec<RgbImage>,
    pub pca: Pca,
}

/// Joint PCA over the tokens of all `images`; the leading components drive
/// the color channels, min-max normalized over the whole set.
pub fn pca_visualize(encoder: &Encoder, images: &[Tensor], level: Level, components: usize) -> Result<PcaVisualization> {
    if images.is_empty() {
        return Err(Error::invalid("PCA visualization needs at least one image"));
    }
    let mut mats = Vec::with_capacity(images.len());
    for img in images {
        mats.push(tensor_to_matrix(&encoder.extract_tokens(img, level)?.tokens)?);
    }
    let p = mats[0].nrows();
    let d = mats[0].ncols();
    let mut all = DMatrix::zeros(p * mats.len(), d);
    for (i, m) in mats.iter().enumerate() {
        all.view_mut((i * p, 0), (p, d)).copy_from(m);
    }
    let pca = Pca::fit(&all, components.min(d).max(1))?;
    let scores = pca.project(&all);
    let k = scores.ncols();
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for c in 0..k {
        for v in scores.column(c).iter() {
            lo[c] = lo[c].min(*v);
            hi[c] = hi[c].max(*v);
        }
    }
    let side = (p as f64).sqrt().round() as usize;
    let patch = encoder.backbone().patch_size();
    let maps = (0..mats.len())
        .map(|img| {
            let mut out = RgbImage::new((side * patch) as u32, (side * patch) as u32);
            for t in 0..p {
                let mut px = [128u8; 3];
                for (ch, v) in px.iter_mut().enumerate() {
                    let c = if k == 1 { 0 } else { ch };
                    *v = if c < k && hi[c] > lo[c] {
                        (255.0 * (scores[(img * p + t, c)] - lo[c]) / (hi[c] - lo[c])).round() as u8
                    } else if c < k {
                        128
                    } else {
                        0
                    };
                }
                let (ty, tx) = (t / side, t % side);
                for y in 0..patch {
                    for x in 0..patch {
                        out.put_pixel((tx * patch + x) as u32, (ty * patch + y) as u32, Rgb(px));
                    }
                }
            }
            out
        })
        .collect();
    Ok(PcaVisualization { maps, pca })
}
