//! Item-based nearest neighbors over the binary user-item matrix.
//!
//! sim(i, j) = |U_i ∩ U_j| / sqrt(|U_i| |U_j|), i.e. cosine similarity of
//! binary item columns. A user's score for item i sums sim(i, j) over the
//! user's train items j that rank among i's top `k_neighbors` neighbors.

use crate::recommend::{RecommenderModel, TrainData};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct ItemKnnModel<F> {
    pub n_users: usize,
    pub n_items: usize,
    pub k_neighbors: usize,
    /// Per item, its retained neighbors sorted by descending similarity
    /// (ties toward the lower item id). The diagonal is excluded.
    pub neighbors: Vec<Vec<(u32, F)>>,
    /// Per-user train items for scoring membership checks.
    user_items: Vec<Vec<u32>>,
}

/// Cosine co-occurrence rows for every item (diagonal excluded), untruncated.
pub fn cosine_similarity_rows<F: Real>(data: &TrainData) -> Vec<Vec<(u32, F)>> {
    let n_items = data.n_items;
    let mut item_counts = vec![0u32; n_items];
    for &(_, i) in &data.pairs {
        item_counts[i as usize] += 1;
    }
    // co-occurrence counts via each user's item list
    let mut rows: Vec<Vec<(u32, F)>> = vec![Vec::new(); n_items];
    let mut co = vec![0u32; n_items];
    for i in 0..n_items as u32 {
        for c in co.iter_mut() {
            *c = 0;
        }
        for items in &data.user_items {
            if items.binary_search(&i).is_ok() {
                for &j in items {
                    co[j as usize] += 1;
                }
            }
        }
        let deg_i = item_counts[i as usize];
        if deg_i == 0 {
            continue;
        }
        let mut row = Vec::new();
        for j in 0..n_items as u32 {
            if j == i || co[j as usize] == 0 {
                continue;
            }
            let deg_j = item_counts[j as usize];
            let sim = F::from_u32(co[j as usize]).unwrap()
                / (F::from_u32(deg_i).unwrap() * F::from_u32(deg_j).unwrap()).sqrt();
            row.push((j, sim));
        }
        rows[i as usize] = row;
    }
    rows
}

/// Build the truncated-neighborhood model.
pub fn train_itemknn<F: Real>(data: &TrainData, k_neighbors: usize) -> ItemKnnModel<F> {
    let mut neighbors = cosine_similarity_rows::<F>(data);
    for row in &mut neighbors {
        row.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("similarities are finite")
                .then_with(|| a.0.cmp(&b.0))
        });
        row.truncate(k_neighbors);
    }
    ItemKnnModel {
        n_users: data.n_users,
        n_items: data.n_items,
        k_neighbors,
        neighbors,
        user_items: data.user_items.clone(),
    }
}

impl<F: Real> RecommenderModel<F> for ItemKnnModel<F> {
    fn n_users(&self) -> usize {
        self.n_users
    }

    fn score(&self, user: u32, item: u32) -> F {
        let items = &self.user_items[user as usize];
        let mut s = F::zero();
        for &(j, sim) in &self.neighbors[item as usize] {
            if items.binary_search(&j).is_ok() {
                s = s + sim;
            }
        }
        s
    }
}
