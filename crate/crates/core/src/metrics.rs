//! Evaluation mathematics.
//!
//! Category distributions are unweighted means of item share vectors:
//!
//!   p(c|u) = sum_{i in I_u} p(c|i) / |I_u|      (profile)
//!   q(c|u) = sum_{i in R_u} p(c|i) / |R_u|      (recommendations)
//!
//! Miscalibration is the KL divergence KL(P||Q) in nats, with Q smoothed as
//! q~ = (1-alpha)q + alpha*p so the divergence stays finite when the
//! recommendations miss a profile category. NDCG@k uses binary gains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CategoryCatalog, CategoryDistribution, ItemSet, RecommendationList};
use crate::scalar::Real;

/// Knobs for the metric suite. `smoothing_alpha` must be in [0, 1);
/// zero reproduces the unsmoothed divergence exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig<F> {
    pub smoothing_alpha: F,
    /// Recommendation list cutoff.
    pub k: usize,
}

impl<F: Real> Default for MetricConfig<F> {
    fn default() -> Self {
        Self {
            smoothing_alpha: F::from_f64_lossy(0.01),
            k: 10,
        }
    }
}

/// Profile category distribution: mean of p(c|i) over the user's item
/// set. `None` when the set is empty (caller decides exclusion).
pub fn profile_distribution<F: Real>(
    items: &ItemSet,
    catalog: &CategoryCatalog<F>,
) -> Option<CategoryDistribution<F>> {
    CategoryDistribution::mean_of_items(items.iter(), catalog)
}

/// Category distribution of a recommendation list: unweighted mean of
/// p(c|i) over the listed items, no rank discounting.
pub fn recommendation_distribution<F: Real>(
    rec: &RecommendationList<F>,
    catalog: &CategoryCatalog<F>,
) -> Result<CategoryDistribution<F>> {
    CategoryDistribution::mean_of_items(rec.items.iter(), catalog)
        .ok_or(Error::EmptyRecommendation)
}

/// KL(p || q~) with q~ = (1-alpha)q + alpha*p, natural log, in nats.
///
/// Terms with p(c)=0 contribute zero. With alpha = 0 and q missing mass on
/// a category where p has some, the divergence is +inf (the unsmoothed
/// limit).
pub fn miscalibration<F: Real>(
    p: &CategoryDistribution<F>,
    q: &CategoryDistribution<F>,
    alpha: F,
) -> Result<F> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    let one = F::one();
    let mut sum = F::zero();
    for (&pc, &qc) in p.probs().iter().zip(q.probs()) {
        if pc > F::zero() {
            let smoothed = (one - alpha) * qc + alpha * pc;
            sum = sum + pc * (pc / smoothed).ln();
        }
    }
    Ok(sum)
}

/// Binary-gain NDCG at cutoff `k`: DCG with discount 1/log2(rank+1),
/// normalized by the ideal DCG over min(k, |relevant|) positions. Zero when
/// `relevant` is empty.
pub fn ndcg_at_k<F: Real>(rec: &RecommendationList<F>, relevant: &ItemSet, k: usize) -> F {
    if relevant.is_empty() || k == 0 {
        return F::zero();
    }
    let mut dcg = F::zero();
    for (rank, item) in rec.items.iter().take(k).enumerate() {
        if relevant.contains(item) {
            dcg = dcg + F::one() / F::from_usize(rank + 2).unwrap().log2();
        }
    }
    let ideal_len = k.min(relevant.len());
    let mut idcg = F::zero();
    for rank in 0..ideal_len {
        idcg = idcg + F::one() / F::from_usize(rank + 2).unwrap().log2();
    }
    if idcg == F::zero() {
        F::zero()
    } else {
        dcg / idcg
    }
}

/// Shannon entropy -sum p ln p in nats; zero-probability terms contribute 0.
pub fn profile_entropy<F: Real>(p: &CategoryDistribution<F>) -> F {
    let mut h = F::zero();
    for &pc in p.probs() {
        if pc > F::zero() {
            h = h - pc * pc.ln();
        }
    }
    h
}
