use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::softmax_last;
use crate::semantics::StructureDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

/// Two softmax groups over descriptor similarities: all generated pairs
/// `i > j` first, then every generated sample against the reference.
#[derive(Debug, Clone)]
pub struct SimilarityDistribution {
    /// `[N(N−1)/2 + N]`.
    pub probs: Tensor,
    pub n: usize,
    pub domain: Domain,
}

impl SimilarityDistribution {
    pub fn len(&self) -> usize {
        pair_count(self.n) + self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pair_group(&self) -> Result<Tensor> {
        Ok(self.probs.narrow(0, 0, pair_count(self.n))?)
    }

    pub fn reference_group(&self) -> Result<Tensor> {
        Ok(self.probs.narrow(0, pair_count(self.n), self.n)?)
    }
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Canonical slot order of the generated pairs: `(1, 0), (2, 0), (2, 1), …`.
pub fn pair_slots(n: usize) -> Vec<(usize, usize)> {
    (1..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
}

fn cosine_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let na = a.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let nb = b.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let ua = a.broadcast_div(&na)?;
    let ub = b.broadcast_div(&nb)?;
    Ok(ua.matmul(&ub.t()?)?)
}

/// `descriptors` is `[N, K]`, `reference` is `[K]`.
pub fn similarity_distribution(
    descriptors: &Tensor,
    reference: &Tensor,
    temperature: f64,
    domain: Domain,
) -> Result<SimilarityDistribution> {
    let (n, k) = descriptors.dims2()?;
    if n < 2 {
        return Err(Error::invalid(format!("similarity distribution needs N >= 2 samples, got {n}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let reference = reference.flatten_all()?.to_dtype(descriptors.dtype())?;
    if reference.dim(0)? != k {
        return Err(Error::shape(format!("reference descriptor length {} vs {k}", reference.dim(0)?)));
    }
    let sims = cosine_rows(descriptors, descriptors)?.flatten_all()?;
    let idx: Vec<u32> = pair_slots(n).iter().map(|&(i, j)| (i * n + j) as u32).collect();
    let idx = Tensor::from_vec(idx, pair_count(n), descriptors.device())?;
    let pairs = sims.index_select(&idx, 0)?;
    let refs = cosine_rows(descriptors, &reference.unsqueeze(0)?)?.flatten_all()?;
    let pg = softmax_last(&(pairs / temperature)?)?;
    let rg = softmax_last(&(refs / temperature)?)?;
    Ok(SimilarityDistribution {
        probs: Tensor::cat(&[&pg, &rg], 0)?,
        n,
        domain,
    })
}

pub fn build_similarity_distribution(
    descriptors: &[StructureDescriptor],
    reference: &StructureDescriptor,
    temperature: f64,
    domain: Domain,
) -> Result<SimilarityDistribution> {
    if descriptors.len() < 2 {
        return Err(Error::invalid(format!(
            "similarity distribution needs N >= 2 samples, got {}",
            descriptors.len()
        )));
    }
    let rows: Vec<&Tensor> = descriptors.iter().map(|d| &d.values).collect();
    similarity_distribution(&Tensor::stack(&rows, 0)?, &reference.values, temperature, domain)
}

/// Mean squared difference over all slots.
pub fn consistency_loss(source: &SimilarityDistribution, target: &SimilarityDistribution) -> Result<Tensor> {
    if source.n != target.n {
        return Err(Error::shape(format!(
            "distributions over {} and {} samples",
            source.n, target.n
        )));
    }
    mse(&source.probs, &target.probs)
}

/// `(1/M)·Σ (aᵢ − bᵢ)²` over two equally long probability vectors.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("lengths differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    let b = b.to_dtype(a.dtype())?;
    Ok((b - a)?.sqr()?.mean_all()?)
}
