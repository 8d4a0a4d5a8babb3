//! Canonical data types shared across the pipeline, plus dataset-wide
//! statistics and structural validation.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{from_usize, Real};

/// Tolerance for "fractions sum to one" checks.
pub const SHARE_SUM_TOLERANCE: f64 = 1e-9;

/// Dense user identifier assigned at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

/// Dense item identifier assigned at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

/// Dense category identifier assigned at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(pub u32);

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl CategoryId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Deterministically ordered item set.
pub type ItemSet = BTreeSet<ItemId>;

/// One timestamped user-item event with a binary relevance label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction<F> {
    pub user: UserId,
    pub item: ItemId,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    /// `true` is a positive (relevant) interaction.
    pub positive: bool,
    /// Raw preference signal (e.g. watch ratio) when the source has one.
    pub raw_signal: Option<F>,
}

/// Item-to-category shares p(c|i): for every item a sparse vector of
/// (category, fraction) entries, fractions positive and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCatalog<F> {
    pub category_names: Vec<String>,
    /// Indexed by dense item id.
    pub shares: Vec<Vec<(CategoryId, F)>>,
}

impl<F: Real> CategoryCatalog<F> {
    pub fn n_categories(&self) -> usize {
        self.category_names.len()
    }

    pub fn item_shares(&self, item: ItemId) -> &[(CategoryId, F)] {
        &self.shares[item.index()]
    }
}

/// A canonical, densely indexed interaction dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset<F> {
    /// Sorted by (timestamp, user, item).
    pub interactions: Vec<Interaction<F>>,
    pub catalog: CategoryCatalog<F>,
    /// Dense user id -> external key.
    pub user_keys: Vec<String>,
    /// Dense item id -> external key.
    pub item_keys: Vec<String>,
}

impl<F: Real> Dataset<F> {
    pub fn n_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_keys.len()
    }

    /// Interactions of one user, most recent first.
    pub fn user_profile(&self, user: UserId) -> Vec<&Interaction<F>> {
        let mut rows: Vec<&Interaction<F>> = self
            .interactions
            .iter()
            .filter(|i| i.user == user)
            .collect();
        rows.sort_by_key(|i| std::cmp::Reverse((i.timestamp, i.item)));
        rows
    }

    /// Distinct positively-labeled items per user.
    pub fn positive_profiles(&self) -> Vec<ItemSet> {
        let mut profiles = vec![ItemSet::new(); self.n_users()];
        for i in self.interactions.iter().filter(|i| i.positive) {
            profiles[i.user.index()].insert(i.item);
        }
        profiles
    }
}

/// Headline statistics of a canonical dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    /// Positive interactions, deduplicated per (user, item) pair.
    pub n_interactions: usize,
    /// 1 - n_interactions / (n_users * n_items).
    pub sparsity: f64,
}

/// Sparsity of the deduplicated positive interaction matrix.
pub fn sparsity(n_users: usize, n_items: usize, n_unique_positive: usize) -> f64 {
    1.0 - n_unique_positive as f64 / (n_users as f64 * n_items as f64)
}

/// Counts and sparsity over the positive, per-(user, item) deduplicated
/// interaction matrix.
pub fn dataset_stats<F: Real>(dataset: &Dataset<F>) -> Result<DatasetStats> {
    if dataset.interactions.is_empty() || dataset.n_users() == 0 || dataset.n_items() == 0 {
        return Err(Error::EmptyDataset);
    }
    let unique_positive: BTreeSet<(UserId, ItemId)> = dataset
        .interactions
        .iter()
        .filter(|i| i.positive)
        .map(|i| (i.user, i.item))
        .collect();
    Ok(DatasetStats {
        n_users: dataset.n_users(),
        n_items: dataset.n_items(),
        n_categories: dataset.catalog.n_categories(),
        n_interactions: unique_positive.len(),
        sparsity: sparsity(dataset.n_users(), dataset.n_items(), unique_positive.len()),
    })
}

/// One invariant breach found by [`validate`]. Violations are data, not
/// errors: callers decide whether to abort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Where the breach sits (interaction row, item key, ...).
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Check every structural invariant of the dataset; an empty result means
/// all downstream operations are safe to run.
pub fn validate<F: Real>(dataset: &Dataset<F>) -> Vec<Violation> {
    let mut out = Vec::new();
    if dataset.interactions.is_empty() {
        out.push(Violation {
            location: "dataset".into(),
            message: "no interactions".into(),
        });
    }
    let n_users = dataset.n_users() as u32;
    let n_items = dataset.n_items() as u32;
    let n_categories = dataset.catalog.n_categories() as u32;

    for (row, i) in dataset.interactions.iter().enumerate() {
        let loc = || format!("interaction {row}");
        if i.timestamp <= 0 {
            out.push(Violation {
                location: loc(),
                message: format!("timestamp {} is not positive", i.timestamp),
            });
        }
        if i.user.0 >= n_users {
            out.push(Violation {
                location: loc(),
                message: format!("dangling user {}", i.user),
            });
        }
        if i.item.0 >= n_items {
            out.push(Violation {
                location: loc(),
                message: format!("dangling item {}", i.item),
            });
        } else if dataset
            .catalog
            .shares
            .get(i.item.index())
            .is_none_or(|s| s.is_empty())
        {
            out.push(Violation {
                location: loc(),
                message: format!("item {} has no catalog entry", i.item),
            });
        }
        if let Some(sig) = i.raw_signal {
            if !(sig >= F::zero() && sig.is_finite()) {
                out.push(Violation {
                    location: loc(),
                    message: format!("raw signal {sig} is negative or non-finite"),
                });
            }
        }
    }

    for (item, shares) in dataset.catalog.shares.iter().enumerate() {
        if shares.is_empty() {
            continue; // only flagged when the item actually has interactions
        }
        let loc = || format!("catalog item {item}");
        let mut sum = 0.0;
        for &(cat, frac) in shares {
            if cat.0 >= n_categories {
                out.push(Violation {
                    location: loc(),
                    message: format!("unknown category {cat}"),
                });
            }
            let frac = frac.to_f64().unwrap_or(f64::NAN);
            if !frac.is_finite() || frac <= 0.0 {
                out.push(Violation {
                    location: loc(),
                    message: format!("share {frac} is not positive"),
                });
            }
            sum += frac;
        }
        if (sum - 1.0).abs() > SHARE_SUM_TOLERANCE {
            out.push(Violation {
                location: loc(),
                message: format!("shares not normalized (sum {sum})"),
            });
        }
    }
    out
}

/// Probability vector over the catalog's categories: all entries are
/// non-negative and sum to one within [`SHARE_SUM_TOLERANCE`].
///
/// An empty source set has no distribution; operations that can hit that
/// case return `Option<CategoryDistribution<F>>` and let the caller decide
/// on exclusion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryDistribution<F> {
    probs: Vec<F>,
}

impl<F: Real> CategoryDistribution<F> {
    /// Wrap a raw vector, normalizing defensively is *not* done here: the
    /// input must already sum to one.
    pub fn from_probs(probs: Vec<F>) -> Self {
        debug_assert!({
            let sum: f64 = probs.iter().map(|p| p.to_f64().unwrap()).sum();
            (sum - 1.0).abs() <= 1e-6
        });
        Self { probs }
    }

    /// Mean of the share vectors of `items` (each item contributes its
    /// p(c|i) row). Returns `None` for an empty item set.
    pub fn mean_of_items<'a>(
        items: impl IntoIterator<Item = &'a ItemId>,
        catalog: &CategoryCatalog<F>,
    ) -> Option<Self> {
        let mut probs = vec![F::zero(); catalog.n_categories()];
        let mut count = 0usize;
        for &item in items {
            for &(cat, frac) in catalog.item_shares(item) {
                probs[cat.index()] = probs[cat.index()] + frac;
            }
            count += 1;
        }
        if count == 0 {
            return None;
        }
        let denom = from_usize::<F>(count);
        for p in &mut probs {
            *p = *p / denom;
        }
        Some(Self { probs })
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Ranked top-K list for one user: no duplicate items, scores
/// non-increasing, and no item from the user's training interactions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationList<F> {
    pub user: UserId,
    pub items: Vec<ItemId>,
    pub scores: Vec<F>,
}

impl<F: Real> RecommendationList<F> {
    pub fn new(user: UserId, items: Vec<ItemId>, scores: Vec<F>) -> Self {
        debug_assert_eq!(items.len(), scores.len());
        debug_assert!(scores.windows(2).all(|w| w[0] >= w[1]), "scores must be non-increasing");
        debug_assert_eq!(
            items.iter().collect::<BTreeSet<_>>().len(),
            items.len(),
            "duplicate items in recommendation list"
        );
        Self { user, items, scores }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
