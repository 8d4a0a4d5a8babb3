//! Seeded generator for non-stationary interaction datasets with a planted
//! per-user preference shift, used to verify the whole pipeline: windows
//! newer than the shift sample from each user's post-shift category
//! distribution, older windows from the pre-shift one.

use rand::distributions::Distribution;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CategoryCatalog, CategoryId, Dataset, Interaction, ItemId, UserId};
use crate::scalar::Real;

/// Every window spans one synthetic day.
pub const WINDOW_WIDTH_SECS: i64 = 86_400;
/// Newest timestamps sit just below this anchor.
pub const ANCHOR: i64 = 1_700_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub windows: usize,
    /// Window index (1 = most recent) at which the shift happened: windows
    /// strictly newer than `shift_at` draw from the post-shift preference,
    /// `shift_at` and older draw from the pre-shift one. `shift_at = 1`
    /// therefore yields a stationary (pre-only) dataset.
    pub shift_at: usize,
    /// Dirichlet concentration of the pre-/post-shift preferences; small
    /// values concentrate each user on few categories.
    pub pre_concentration: f64,
    pub post_concentration: f64,
    /// When set, pre-shift preferences live on the first half of the
    /// categories and post-shift on the second half (disjoint supports).
    pub orthogonal_supports: bool,
    pub interactions_per_user_per_window: usize,
    pub seed: u64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 500,
            n_categories: 10,
            windows: 8,
            shift_at: 4,
            pre_concentration: 0.3,
            post_concentration: 0.3,
            orthogonal_supports: true,
            interactions_per_user_per_window: 40,
            seed: 17,
        }
    }
}

impl DriftSpec {
    fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidGeneratorSpec(msg.into()));
        if self.n_users == 0 || self.n_items == 0 || self.n_categories == 0 {
            return fail("counts must be >= 1");
        }
        if self.windows == 0 || self.interactions_per_user_per_window == 0 {
            return fail("windows and interactions per cell must be >= 1");
        }
        if self.shift_at < 1 || self.shift_at > self.windows {
            return fail("shift_at must be within 1..=windows");
        }
        if self.n_categories > self.n_items {
            return fail("more categories than items");
        }
        if self.orthogonal_supports && self.n_categories < 2 {
            return fail("orthogonal supports need at least 2 categories");
        }
        if self.pre_concentration <= 0.0 || self.post_concentration <= 0.0 {
            return fail("concentrations must be positive");
        }
        Ok(())
    }
}

/// Planted ground truth exported alongside the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTruth {
    pub spec: DriftSpec,
    pub window_width_secs: i64,
    pub anchor: i64,
    /// Per user, the pre- and post-shift category distributions.
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

/// Dirichlet draw via normalized Gamma(concentration, 1) samples over the
/// index range `support`.
fn dirichlet(
    rng: &mut StdRng,
    n_categories: usize,
    support: std::ops::Range<usize>,
    concentration: f64,
) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("valid concentration");
    let mut weights = vec![0.0f64; n_categories];
    let mut total = 0.0;
    for c in support.clone() {
        let w: f64 = gamma.sample(rng);
        weights[c] = w;
        total += w;
    }
    if total <= 0.0 {
        // all draws underflowed; fall back to uniform over the support
        let p = 1.0 / support.len() as f64;
        for c in support {
            weights[c] = p;
        }
    } else {
        for w in &mut weights {
            *w /= total;
        }
    }
    weights
}

fn sample_category(rng: &mut StdRng, dist: &[f64]) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (c, &p) in dist.iter().enumerate() {
        acc += p;
        if x < acc {
            return c;
        }
    }
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(dist.len() - 1)
}

/// Generate the planted-shift dataset and its ground truth. Deterministic
/// under the spec's seed.
pub fn generate_drift_dataset<F: Real>(spec: &DriftSpec) -> Result<(Dataset<F>, DriftTruth)> {
    spec.validate()?;
    let mut rng = StdRng::seed_from_u64(spec.seed);

    // evenly assign one category per item over a shuffled item order, so
    // every category has floor(M/W) or ceil(M/W) items
    let mut item_order: Vec<u32> = (0..spec.n_items as u32).collect();
    for i in (1..item_order.len()).rev() {
        let j = rng.gen_range(0..=i);
        item_order.swap(i, j);
    }
    let mut item_category = vec![0usize; spec.n_items];
    let mut items_by_category: Vec<Vec<u32>> = vec![Vec::new(); spec.n_categories];
    for (pos, &item) in item_order.iter().enumerate() {
        let cat = pos % spec.n_categories;
        item_category[item as usize] = cat;
        items_by_category[cat].push(item);
    }
    for items in &mut items_by_category {
        items.sort_unstable();
    }

    let (pre_support, post_support) = if spec.orthogonal_supports {
        let half = spec.n_categories / 2;
        (0..half, half..spec.n_categories)
    } else {
        (0..spec.n_categories, 0..spec.n_categories)
    };

    let mut pre = Vec::with_capacity(spec.n_users);
    let mut post = Vec::with_capacity(spec.n_users);
    for _ in 0..spec.n_users {
        pre.push(dirichlet(
            &mut rng,
            spec.n_categories,
            pre_support.clone(),
            spec.pre_concentration,
        ));
        post.push(dirichlet(
            &mut rng,
            spec.n_categories,
            post_support.clone(),
            spec.post_concentration,
        ));
    }

    let mut interactions = Vec::with_capacity(
        spec.n_users * spec.windows * spec.interactions_per_user_per_window,
    );
    for u in 0..spec.n_users {
        for window in 1..=spec.windows {
            let dist = if window < spec.shift_at {
                &post[u]
            } else {
                &pre[u]
            };
            let hi = ANCHOR - (window as i64 - 1) * WINDOW_WIDTH_SECS;
            let lo = ANCHOR - window as i64 * WINDOW_WIDTH_SECS;
            for _ in 0..spec.interactions_per_user_per_window {
                let cat = sample_category(&mut rng, dist);
                let pool = &items_by_category[cat];
                let item = pool[rng.gen_range(0..pool.len())];
                // uniform in the half-open window (lo, hi]
                let ts = rng.gen_range(lo + 1..=hi);
                interactions.push(Interaction {
                    user: UserId(u as u32),
                    item: ItemId(item),
                    timestamp: ts,
                    positive: true,
                    raw_signal: None,
                });
            }
        }
    }
    interactions.sort_by_key(|i| (i.timestamp, i.user, i.item));

    let dataset = Dataset {
        interactions,
        catalog: CategoryCatalog {
            category_names: (0..spec.n_categories).map(|c| format!("c{c}")).collect(),
            shares: item_category
                .iter()
                .map(|&c| vec![(CategoryId(c as u32), F::one())])
                .collect(),
        },
        user_keys: (0..spec.n_users).map(|u| format!("u{u:04}")).collect(),
        item_keys: (0..spec.n_items).map(|i| format!("i{i:04}")).collect(),
    };
    let truth = DriftTruth {
        spec: spec.clone(),
        window_width_secs: WINDOW_WIDTH_SECS,
        anchor: ANCHOR,
        pre,
        post,
    };
    Ok((dataset, truth))
}
