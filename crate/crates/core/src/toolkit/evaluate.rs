//! Evaluation metrics: LPIPS between source and stylized samples, and the
//! directional content (dir-CC) and identity (dir-ID) similarities against
//! the reference pair.

use std::fs::File;
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::backends::{IdentityNet, PerceptualNet};
use crate::error::{Error, Result};
use crate::generator::{Deform, Generator};
use crate::toolkit::bundle::Bundle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: usize,
    pub seed: u64,
    pub lpips: f64,
    pub dir_cc: f64,
    pub dir_id: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub style: String,
    pub model_hash: String,
    pub n_samples: usize,
    pub perceptual_backend: String,
    pub identity_backend: String,
    pub direction_layers: Vec<String>,
    pub mean_lpips: f64,
    pub mean_dir_cc: f64,
    pub mean_dir_id: f64,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn to_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    let n = t.dim(0)?;
    Ok(t.to_dtype(DType::F64)?.reshape((n, ()))?.to_vec2::<f64>()?)
}

/// Cosine of two direction vectors; a zero direction scores 0.
pub fn direction_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn differences(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| y.iter().zip(x).map(|(q, p)| q - p).collect())
        .collect()
}

/// Per-pair `(lpips, dir_cc, dir_id)` for sources `[N, 3, R, R]`, stylized
/// outputs `[N, 3, R, R]` and the reference pair `[1, 3, R, R]` each.
pub fn pair_metrics(
    sources: &Tensor,
    targets: &Tensor,
    ref_source: &Tensor,
    ref_target: &Tensor,
    perceptual: &dyn PerceptualNet,
    identity: &dyn IdentityNet,
) -> Result<Vec<(f64, f64, f64)>> {
    let lpips = perceptual.distance(sources, targets)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let ref_cc = differences(
        &to_rows(&perceptual.direction_features(ref_source)?)?,
        &to_rows(&perceptual.direction_features(ref_target)?)?,
    );
    let gen_cc = differences(
        &to_rows(&perceptual.direction_features(sources)?)?,
        &to_rows(&perceptual.direction_features(targets)?)?,
    );
    let ref_id = differences(&to_rows(&identity.embed(ref_source)?)?, &to_rows(&identity.embed(ref_target)?)?);
    let gen_id = differences(&to_rows(&identity.embed(sources)?)?, &to_rows(&identity.embed(targets)?)?);
    let mut zero = 0usize;
    let out = (0..lpips.len())
        .map(|i| {
            if gen_cc[i].iter().all(|v| *v == 0.0) {
                zero += 1;
            }
            (
                lpips[i].max(0.0),
                direction_cosine(&gen_cc[i], &ref_cc[0]),
                direction_cosine(&gen_id[i], &ref_id[0]),
            )
        })
        .collect();
    if zero > 0 {
        log::warn!("{zero} sample pair(s) have identical features; their directional scores are 0");
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Evaluate `G_s(w)` against `G_t(w)` for one latent per seed.
pub fn evaluate(
    bundle: &Bundle,
    source: &Generator,
    perceptual: &dyn PerceptualNet,
    identity: &dyn IdentityNet,
    seeds: &[u64],
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("evaluation needs at least one seed"));
    }
    let refs = bundle.references();
    let truncation = bundle.config().truncation;
    let mut rows = Vec::with_capacity(seeds.len());
    for (index, &seed) in seeds.iter().enumerate() {
        let w = source.sample_latent(seed, truncation)?;
        let a = source.synthesize(&w, Deform::Off)?;
        let b = bundle.generator().synthesize(&w, Deform::On)?;
        let (lpips, dir_cc, dir_id) =
            pair_metrics(&a, &b, &refs.source_image, &refs.target_image, perceptual, identity)?[0];
        rows.push(EvalRow {
            index,
            seed,
            lpips,
            dir_cc,
            dir_id,
        });
    }
    Ok(EvalReport {
        style: bundle.manifest.style.clone(),
        model_hash: bundle.manifest.model_hash.clone(),
        n_samples: rows.len(),
        perceptual_backend: perceptual.name().to_string(),
        identity_backend: identity.name().to_string(),
        direction_layers: perceptual.direction_layer_names(),
        mean_lpips: mean(rows.iter().map(|r| r.lpips)),
        mean_dir_cc: mean(rows.iter().map(|r| r.dir_cc)),
        mean_dir_id: mean(rows.iter().map(|r| r.dir_id)),
        rows,
    })
}

/// Parse whitespace- or comma-separated seeds.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| Error::invalid(format!("`{s}` is not a valid seed")))
        })
        .collect()
}
