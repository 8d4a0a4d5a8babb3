//! Ranking models trained per temporal sample: BPR matrix factorization
//! and an item-based cosine KNN, plus top-k extraction, exhaustive
//! hyperparameter search, and the baseline policies used by the
//! verification suite.

mod bpr;
mod itemknn;

pub use bpr::{train_bpr, BprHyperparams, BprModel, NegativeMode, Provenance};
pub use itemknn::{train_itemknn, ItemKnnModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ndcg_at_k;
use crate::model::{ItemId, ItemSet, RecommendationList, UserId};
use crate::scalar::Real;

/// Deduplicated per-user training interactions in dense index space.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub n_users: usize,
    pub n_items: usize,
    /// Sorted distinct positive train items per user.
    pub user_items: Vec<Vec<u32>>,
    /// Sorted items a user touched with only non-positive labels; the
    /// optional pool for `NegativeMode::PreferObservedZeros`.
    pub user_zero_items: Vec<Vec<u32>>,
    /// Flattened (user, item) positives, user-major, item-ascending.
    pub pairs: Vec<(u32, u32)>,
}

impl TrainData {
    pub fn new(n_users: usize, n_items: usize, mut user_items: Vec<Vec<u32>>) -> Self {
        for items in &mut user_items {
            items.sort_unstable();
            items.dedup();
        }
        let pairs = user_items
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u as u32, i)))
            .collect();
        Self {
            n_users,
            n_items,
            user_items,
            user_zero_items: vec![Vec::new(); n_users],
            pairs,
        }
    }

    pub fn with_zero_items(mut self, mut user_zero_items: Vec<Vec<u32>>) -> Self {
        for items in &mut user_zero_items {
            items.sort_unstable();
            items.dedup();
        }
        self.user_zero_items = user_zero_items;
        self
    }

    pub fn has_positive(&self, user: u32, item: u32) -> bool {
        self.user_items[user as usize].binary_search(&item).is_ok()
    }

    /// Sorted distinct items with at least one positive, the candidate set
    /// for recommendation.
    pub fn items_with_positives(&self) -> Vec<u32> {
        let mut items: Vec<u32> = self.pairs.iter().map(|&(_, i)| i).collect();
        items.sort_unstable();
        items.dedup();
        items
    }
}

/// A trained model that can score any (user, item) pair.
pub trait RecommenderModel<F: Real> {
    fn n_users(&self) -> usize;

    fn score(&self, user: u32, item: u32) -> F;

    /// Produce the user's ranked list; the default routes through
    /// [`top_k`]. Policies that construct lists directly may override.
    fn recommend(
        &self,
        user: UserId,
        candidates: &[u32],
        exclude: &ItemSet,
        k: usize,
    ) -> Result<RecommendationList<F>> {
        top_k(self, user, candidates, exclude, k)
    }
}

/// The k highest-scoring candidates for `user`, excluding the user's
/// training items. Ties break toward the lower item id; fewer than k items
/// are returned only when the candidates run out.
pub fn top_k<F: Real, M: RecommenderModel<F> + ?Sized>(
    model: &M,
    user: UserId,
    candidates: &[u32],
    exclude: &ItemSet,
    k: usize,
) -> Result<RecommendationList<F>> {
    if user.index() >= model.n_users() {
        return Err(Error::ColdUser(user.0));
    }
    let mut scored: Vec<(F, u32)> = candidates
        .iter()
        .filter(|&&i| !exclude.contains(&ItemId(i)))
        .map(|&i| (model.score(user.0, i), i))
        .collect();
    if scored.is_empty() {
        return Err(Error::NoCandidates(user.0));
    }
    scored.sort_unstable_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("model scores must be finite")
            .then_with(|| a.1.cmp(&b.1))
    });
    scored.truncate(k);
    let (scores, items): (Vec<F>, Vec<ItemId>) =
        scored.into_iter().map(|(s, i)| (s, ItemId(i))).unzip();
    Ok(RecommendationList::new(user, items, scores))
}

/// Hyperparameter grid for the exhaustive search. The default covers
/// learning rates 1e-4..1e-2 (log-spaced) crossed with embedding sizes
/// {64, 128}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid<F> {
    pub learning_rates: Vec<F>,
    pub embedding_dims: Vec<usize>,
}

impl<F: Real> Default for HyperGrid<F> {
    fn default() -> Self {
        Self {
            learning_rates: [1e-4, 5e-4, 1e-3, 5e-3, 1e-2]
                .iter()
                .map(|&lr| F::from_f64_lossy(lr))
                .collect(),
            embedding_dims: vec![64, 128],
        }
    }
}

/// Shared (non-searched) training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BprTrainSettings<F> {
    pub l2_reg: F,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub negative_mode: NegativeMode,
}

impl<F: Real> Default for BprTrainSettings<F> {
    fn default() -> Self {
        Self {
            l2_reg: F::from_f64_lossy(0.01),
            epochs: 50,
            negatives_per_positive: 1,
            negative_mode: NegativeMode::Unobserved,
        }
    }
}

/// One evaluated grid point; `mean_ndcg` is `None` when training diverged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint<F> {
    pub learning_rate: F,
    pub embedding_dim: usize,
    pub mean_ndcg: Option<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchOutcome<F> {
    pub best: BprHyperparams<F>,
    pub trace: Vec<GridPoint<F>>,
}

/// Train and score every grid point on the validation users, maximizing
/// mean NDCG@k. Ties resolve to the lowest learning rate, then the
/// smallest embedding. Errors only when every point diverges.
pub fn grid_search<F: Real>(
    data: &TrainData,
    validation: &[(UserId, ItemSet)],
    grid: &HyperGrid<F>,
    settings: &BprTrainSettings<F>,
    k: usize,
    seed: u64,
) -> Result<GridSearchOutcome<F>> {
    if grid.learning_rates.is_empty() || grid.embedding_dims.is_empty() {
        return Err(Error::InvalidConfig("hyperparameter grid is empty".into()));
    }
    let candidates = data.items_with_positives();
    let points: Vec<(F, usize)> = grid
        .learning_rates
        .iter()
        .flat_map(|&lr| grid.embedding_dims.iter().map(move |&dim| (lr, dim)))
        .collect();

    use rayon::prelude::*;
    let trace: Vec<GridPoint<F>> = points
        .par_iter()
        .map(|&(lr, dim)| {
            let hp = BprHyperparams {
                learning_rate: lr,
                embedding_dim: dim,
                l2_reg: settings.l2_reg,
                epochs: settings.epochs,
                negatives_per_positive: settings.negatives_per_positive,
                seed,
            };
            let mean_ndcg = match train_bpr(data, &hp, settings.negative_mode) {
                Ok(model) => {
                    let mut total = F::zero();
                    let mut n = 0usize;
                    for (user, relevant) in validation {
                        let exclude: ItemSet = data.user_items[user.index()]
                            .iter()
                            .map(|&i| ItemId(i))
                            .collect();
                        if let Ok(rec) = model.recommend(*user, &candidates, &exclude, k) {
                            total = total + ndcg_at_k(&rec, relevant, k);
                            n += 1;
                        }
                    }
                    (n > 0).then(|| total / F::from_usize(n).unwrap())
                }
                Err(Error::Diverged { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(GridPoint {
                learning_rate: lr,
                embedding_dim: dim,
                mean_ndcg,
            })
        })
        .collect::<Result<_>>()?;

    // points iterate lr-major then dim, so keeping the first strict
    // maximum realizes the tie rule
    let mut best: Option<&GridPoint<F>> = None;
    for point in &trace {
        if let Some(ndcg) = point.mean_ndcg {
            if best.is_none_or(|b| ndcg > b.mean_ndcg.unwrap()) {
                best = Some(point);
            }
        }
    }
    let best = best.ok_or(Error::AllPointsDiverged)?;
    Ok(GridSearchOutcome {
        best: BprHyperparams {
            learning_rate: best.learning_rate,
            embedding_dim: best.embedding_dim,
            l2_reg: settings.l2_reg,
            epochs: settings.epochs,
            negatives_per_positive: settings.negatives_per_positive,
            seed,
        },
        trace: trace.clone(),
    })
}

/// Policy that mirrors each user's training category mix exactly: for
/// every train item it recommends one unseen item of the same category, so
/// the recommendation distribution equals the train profile distribution.
/// Requires a single-category catalog.
pub struct CategoryMirror<'a, F: Real> {
    catalog: &'a crate::model::CategoryCatalog<F>,
    train_items: &'a [Vec<u32>],
    items_by_category: Vec<Vec<u32>>,
}

impl<'a, F: Real> CategoryMirror<'a, F> {
    pub fn new(
        catalog: &'a crate::model::CategoryCatalog<F>,
        train_items: &'a [Vec<u32>],
    ) -> Result<Self> {
        let mut items_by_category = vec![Vec::new(); catalog.n_categories()];
        for (item, shares) in catalog.shares.iter().enumerate() {
            if shares.len() != 1 {
                return Err(Error::InvalidConfig(
                    "category mirror needs a single-category catalog".into(),
                ));
            }
            items_by_category[shares[0].0.index()].push(item as u32);
        }
        Ok(Self {
            catalog,
            train_items,
            items_by_category,
        })
    }
}

impl<'a, F: Real> RecommenderModel<F> for CategoryMirror<'a, F> {
    fn n_users(&self) -> usize {
        self.train_items.len()
    }

    fn score(&self, _user: u32, _item: u32) -> F {
        F::zero()
    }

    fn recommend(
        &self,
        user: UserId,
        _candidates: &[u32],
        exclude: &ItemSet,
        _k: usize,
    ) -> Result<RecommendationList<F>> {
        if user.index() >= self.n_users() {
            return Err(Error::ColdUser(user.0));
        }
        let mut items = Vec::new();
        for &train_item in &self.train_items[user.index()] {
            let category = self.catalog.shares[train_item as usize][0].0;
            let substitute = self.items_by_category[category.index()]
                .iter()
                .copied()
                .find(|&i| !exclude.contains(&ItemId(i)) && !items.contains(&ItemId(i)))
                .ok_or(Error::NoCandidates(user.0))?;
            items.push(ItemId(substitute));
        }
        if items.is_empty() {
            return Err(Error::NoCandidates(user.0));
        }
        let scores = vec![F::zero(); items.len()];
        Ok(RecommendationList::new(user, items, scores))
    }
}

/// Uniform-random scores, deterministic in (seed, user, item). The control
/// policy for sanity checks.
pub struct RandomRanker {
    pub n_users: usize,
    pub seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

impl<F: Real> RecommenderModel<F> for RandomRanker {
    fn n_users(&self) -> usize {
        self.n_users
    }

    fn score(&self, user: u32, item: u32) -> F {
        let h = splitmix64(self.seed ^ ((user as u64) << 32 | item as u64));
        F::from_f64_lossy(h as f64 / u64::MAX as f64)
    }
}
