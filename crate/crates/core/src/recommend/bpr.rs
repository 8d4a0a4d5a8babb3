//! Bayesian Personalized Ranking matrix factorization.
//!
//! Per-epoch SGD over the shuffled positive pairs; for each positive (u, i)
//! a negative j is drawn and the pairwise objective
//! ln sigmoid(x_ui - x_uj) - reg is ascended, where x_ui = w_u . v_i + b_i.
//! Training is strictly sequential and seeded: the same (data,
//! hyperparameters, seed) triple produces bit-identical factors.

use std::fmt::Write as _;
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recommend::{RecommenderModel, TrainData};
use crate::scalar::{from_usize, Real};

/// Where sampled negatives come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    /// Uniform over items the user has no positive for (default).
    Unobserved,
    /// Prefer the user's explicitly non-positive interactions, falling
    /// back to unobserved items when there are none.
    PreferObservedZeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BprHyperparams<F> {
    pub learning_rate: F,
    pub embedding_dim: usize,
    pub l2_reg: F,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl<F: Real> BprHyperparams<F> {
    fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !self.learning_rate.is_finite() || self.learning_rate <= F::zero() {
            problems.push("learning_rate must be a positive finite number");
        }
        if self.embedding_dim == 0 {
            problems.push("embedding_dim must be >= 1");
        }
        if self.epochs == 0 {
            problems.push("epochs must be >= 1");
        }
        if self.negatives_per_positive == 0 {
            problems.push("negatives_per_positive must be >= 1");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidHyperparams(problems.join("; ")))
        }
    }
}

/// Training provenance carried by every model and checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sample_level: Option<usize>,
    pub seed: u64,
    pub learning_rate: f64,
    pub embedding_dim: usize,
    pub l2_reg: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BprModel<F> {
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    /// Row-major n_users x dim.
    pub user_factors: Vec<F>,
    /// Row-major n_items x dim.
    pub item_factors: Vec<F>,
    pub item_bias: Vec<F>,
    /// Mean pairwise loss per epoch.
    pub epoch_losses: Vec<F>,
    pub provenance: Provenance,
}

impl<F: Real> BprModel<F> {
    fn user_row(&self, user: u32) -> &[F] {
        let start = user as usize * self.dim;
        &self.user_factors[start..start + self.dim]
    }

    fn item_row(&self, item: u32) -> &[F] {
        let start = item as usize * self.dim;
        &self.item_factors[start..start + self.dim]
    }

    /// Attach the temporal sample level this model was trained on.
    pub fn with_sample_level(mut self, level: usize) -> Self {
        self.provenance.sample_level = Some(level);
        self
    }
}

impl<F: Real> RecommenderModel<F> for BprModel<F> {
    fn n_users(&self) -> usize {
        self.n_users
    }

    fn score(&self, user: u32, item: u32) -> F {
        let mut s = self.item_bias[item as usize];
        for (u, v) in self.user_row(user).iter().zip(self.item_row(item)) {
            s = s + *u * *v;
        }
        s
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// ln(1 + exp(-x)), numerically stable.
fn softplus_neg<F: Real>(x: F) -> F {
    if x >= F::zero() {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Train a BPR model. Errors on invalid hyperparameters or when the loss
/// or any factor stops being finite.
pub fn train_bpr<F: Real>(
    data: &TrainData,
    hp: &BprHyperparams<F>,
    negative_mode: NegativeMode,
) -> Result<BprModel<F>> {
    hp.validate()?;
    if data.pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = hp.embedding_dim;
    let (n_users, n_items) = (data.n_users, data.n_items);
    let mut rng = StdRng::seed_from_u64(hp.seed);

    let init_scale = F::from_f64_lossy(0.01);
    let mut user_factors = vec![F::zero(); n_users * dim];
    let mut item_factors = vec![F::zero(); n_items * dim];
    for f in user_factors.iter_mut().chain(item_factors.iter_mut()) {
        *f = F::standard_normal(&mut rng) * init_scale;
    }
    let mut item_bias = vec![F::zero(); n_items];

    let lr = hp.learning_rate;
    let reg = hp.l2_reg;
    let mut order: Vec<usize> = (0..data.pairs.len()).collect();
    let mut user_snapshot = vec![F::zero(); dim];
    let mut epoch_losses = Vec::with_capacity(hp.epochs);

    let diverged = |epoch: usize| Error::Diverged {
        epoch,
        learning_rate: lr.to_f64().unwrap_or(f64::NAN),
        embedding_dim: dim,
    };

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = F::zero();
        for &pair_idx in &order {
            let (user, pos) = data.pairs[pair_idx];
            for _ in 0..hp.negatives_per_positive {
                let neg = sample_negative(data, user, n_items, negative_mode, &mut rng);
                let Some(neg) = neg else { continue };

                let u_start = user as usize * dim;
                let i_start = pos as usize * dim;
                let j_start = neg as usize * dim;

                let mut diff = item_bias[pos as usize] - item_bias[neg as usize];
                for d in 0..dim {
                    diff = diff
                        + user_factors[u_start + d]
                            * (item_factors[i_start + d] - item_factors[j_start + d]);
                }
                loss_sum = loss_sum + softplus_neg(diff);
                let g = sigmoid(-diff); // 1 - sigmoid(diff)

                user_snapshot.copy_from_slice(&user_factors[u_start..u_start + dim]);
                for d in 0..dim {
                    let wu = user_snapshot[d];
                    let vi = item_factors[i_start + d];
                    let vj = item_factors[j_start + d];
                    user_factors[u_start + d] = wu + lr * (g * (vi - vj) - reg * wu);
                    item_factors[i_start + d] = vi + lr * (g * wu - reg * vi);
                    item_factors[j_start + d] = vj + lr * (-(g * wu) - reg * vj);
                }
                item_bias[pos as usize] =
                    item_bias[pos as usize] + lr * (g - reg * item_bias[pos as usize]);
                item_bias[neg as usize] =
                    item_bias[neg as usize] + lr * (-g - reg * item_bias[neg as usize]);
            }
        }
        let denom = from_usize::<F>(data.pairs.len() * hp.negatives_per_positive);
        let mean_loss = loss_sum / denom;
        if !mean_loss.is_finite() {
            return Err(diverged(epoch));
        }
        epoch_losses.push(mean_loss);
    }

    if user_factors
        .iter()
        .chain(item_factors.iter())
        .chain(item_bias.iter())
        .any(|f| !f.is_finite())
    {
        return Err(diverged(hp.epochs));
    }

    Ok(BprModel {
        n_users,
        n_items,
        dim,
        user_factors,
        item_factors,
        item_bias,
        epoch_losses,
        provenance: Provenance {
            sample_level: None,
            seed: hp.seed,
            learning_rate: hp.learning_rate.to_f64().unwrap_or(f64::NAN),
            embedding_dim: dim,
            l2_reg: hp.l2_reg.to_f64().unwrap_or(f64::NAN),
            epochs: hp.epochs,
        },
    })
}

fn sample_negative(
    data: &TrainData,
    user: u32,
    n_items: usize,
    mode: NegativeMode,
    rng: &mut StdRng,
) -> Option<u32> {
    if mode == NegativeMode::PreferObservedZeros {
        let zeros = &data.user_zero_items[user as usize];
        if !zeros.is_empty() {
            return Some(zeros[rng.gen_range(0..zeros.len())]);
        }
    }
    if data.user_items[user as usize].len() >= n_items {
        return None; // user consumed everything; nothing to contrast
    }
    loop {
        let j = rng.gen_range(0..n_items) as u32;
        if !data.has_positive(user, j) {
            return Some(j);
        }
    }
}

impl<F: Real> BprModel<F> {
    /// Plain-text checkpoint: a versioned provenance header followed by
    /// the factor matrices, one row per line. Floats print in shortest
    /// round-trip form, so save/load is lossless.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "bpr-checkpoint v1").unwrap();
        writeln!(
            out,
            "users {} items {} dim {} seed {} lr {} l2 {} epochs {} level {}",
            self.n_users,
            self.n_items,
            self.dim,
            self.provenance.seed,
            self.provenance.learning_rate,
            self.provenance.l2_reg,
            self.provenance.epochs,
            self.provenance
                .sample_level
                .map(|l| l.to_string())
                .unwrap_or_else(|| "-".into()),
        )
        .unwrap();
        let write_matrix = |out: &mut String, rows: usize, data: &[F]| {
            for r in 0..rows {
                let row = &data[r * self.dim..(r + 1) * self.dim];
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(out, "{}", line.join(" ")).unwrap();
            }
        };
        writeln!(out, "user_factors").unwrap();
        write_matrix(&mut out, self.n_users, &self.user_factors);
        writeln!(out, "item_factors").unwrap();
        write_matrix(&mut out, self.n_items, &self.item_factors);
        writeln!(out, "item_bias").unwrap();
        let bias: Vec<String> = self.item_bias.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", bias.join(" ")).unwrap();
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let bad = |what: &str| Error::Other(format!("bad checkpoint: {what}"));
        if lines.next() != Some("bpr-checkpoint v1") {
            return Err(bad("unknown version line"));
        }
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("missing header"))?.split(' ').collect();
        let field = |key: &str| -> Result<&str> {
            header
                .windows(2)
                .find(|w| w[0] == key)
                .map(|w| w[1])
                .ok_or_else(|| bad(&format!("missing `{key}`")))
        };
        let n_users: usize = field("users")?.parse().map_err(|_| bad("users"))?;
        let n_items: usize = field("items")?.parse().map_err(|_| bad("items"))?;
        let dim: usize = field("dim")?.parse().map_err(|_| bad("dim"))?;
        let seed: u64 = field("seed")?.parse().map_err(|_| bad("seed"))?;
        let learning_rate: f64 = field("lr")?.parse().map_err(|_| bad("lr"))?;
        let l2_reg: f64 = field("l2")?.parse().map_err(|_| bad("l2"))?;
        let epochs: usize = field("epochs")?.parse().map_err(|_| bad("epochs"))?;
        let sample_level = match field("level")? {
            "-" => None,
            v => Some(v.parse().map_err(|_| bad("level"))?),
        };

        let parse_row = |line: &str| -> Result<Vec<F>> {
            line.split(' ')
                .map(|t| t.parse::<F>().map_err(|_| bad("unparseable float")))
                .collect()
        };
        let expect = |tag: &str, lines: &mut std::str::Lines| -> Result<()> {
            if lines.next() != Some(tag) {
                return Err(bad(&format!("expected `{tag}`")));
            }
            Ok(())
        };
        expect("user_factors", &mut lines)?;
        let mut user_factors = Vec::with_capacity(n_users * dim);
        for _ in 0..n_users {
            user_factors.extend(parse_row(lines.next().ok_or_else(|| bad("truncated"))?)?);
        }
        expect("item_factors", &mut lines)?;
        let mut item_factors = Vec::with_capacity(n_items * dim);
        for _ in 0..n_items {
            item_factors.extend(parse_row(lines.next().ok_or_else(|| bad("truncated"))?)?);
        }
        expect("item_bias", &mut lines)?;
        let item_bias = parse_row(lines.next().ok_or_else(|| bad("truncated"))?)?;
        if user_factors.len() != n_users * dim
            || item_factors.len() != n_items * dim
            || item_bias.len() != n_items
        {
            return Err(bad("matrix shape mismatch"));
        }
        Ok(BprModel {
            n_users,
            n_items,
            dim,
            user_factors,
            item_factors,
            item_bias,
            epoch_losses: Vec::new(),
            provenance: Provenance {
                sample_level,
                seed,
                learning_rate,
                embedding_dim: dim,
                l2_reg,
                epochs,
            },
        })
    }
}
