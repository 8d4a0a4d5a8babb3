//! Full experiment orchestration: for every cumulative sample D^l, split
//! each user's positives chronologically into train/test, tune
//! hyperparameters once, train with each repetition seed, and measure
//! per-user miscalibration and NDCG@k; aggregate per level and per user
//! segment.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    miscalibration, ndcg_at_k, profile_distribution, recommendation_distribution, MetricConfig,
};
use crate::model::{Dataset, ItemId, ItemSet, UserId};
use crate::recommend::{
    grid_search, train_bpr, train_itemknn, BprHyperparams, BprTrainSettings, GridPoint, HyperGrid,
    RecommenderModel, TrainData,
};
use crate::scalar::{from_usize, Real};
use crate::segment::{segment_users, Segment, SegmentFactor, UserSegmentAssignment};
use crate::window::{build_sample, split_profiles, SubprofileSplit, TemporalSample, WindowSpec};

/// Which item set defines the reference profile P_u for miscalibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// The user's train items within the sample D^l.
    SampleProfile,
    /// All of the user's positive items in the most recent window.
    RecentWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Bpr,
    ItemKnn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig<F> {
    pub window: WindowSpec,
    /// Fraction of each user's positives held out as test, most recent
    /// first.
    pub holdout_fraction: f64,
    pub min_train: usize,
    pub min_test: usize,
    pub repetitions: usize,
    pub seeds: Vec<u64>,
    pub algo: Algo,
    pub grid: HyperGrid<F>,
    pub train: BprTrainSettings<F>,
    pub knn_neighbors: usize,
    pub metric: MetricConfig<F>,
    pub reference_mode: ReferenceMode,
    /// Worker threads for independent cells; 0 uses the rayon default.
    pub jobs: usize,
}

impl<F: Real> Default for ExperimentConfig<F> {
    fn default() -> Self {
        Self {
            window: WindowSpec::fixed(86_400),
            holdout_fraction: 0.2,
            min_train: 5,
            min_test: 1,
            repetitions: 6,
            seeds: (1..=6).collect(),
            algo: Algo::Bpr,
            grid: HyperGrid::default(),
            train: BprTrainSettings::default(),
            knn_neighbors: 100,
            metric: MetricConfig::default(),
            reference_mode: ReferenceMode::SampleProfile,
            jobs: 0,
        }
    }
}

impl<F: Real> ExperimentConfig<F> {
    /// Collect every configuration problem at once, before any training.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.repetitions == 0 {
            issues.push("repetitions must be >= 1".to_string());
        }
        if self.seeds.len() != self.repetitions {
            issues.push(format!(
                "repetitions ({}) must equal the number of seeds ({})",
                self.repetitions,
                self.seeds.len()
            ));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            issues.push(format!(
                "holdout_fraction {} must be in (0, 1)",
                self.holdout_fraction
            ));
        }
        if self.min_train == 0 {
            issues.push("min_train must be >= 1".to_string());
        }
        if self.min_test == 0 {
            issues.push("min_test must be >= 1".to_string());
        }
        if self.algo == Algo::Bpr
            && (self.grid.learning_rates.is_empty() || self.grid.embedding_dims.is_empty())
        {
            issues.push("hyperparameter grid is empty".to_string());
        }
        if self.algo == Algo::ItemKnn && self.knn_neighbors == 0 {
            issues.push("knn_neighbors must be >= 1".to_string());
        }
        let alpha = self.metric.smoothing_alpha.to_f64().unwrap_or(f64::NAN);
        if !(0.0..1.0).contains(&alpha) {
            issues.push(format!("smoothing_alpha {alpha} must be in [0, 1)"));
        }
        if self.metric.k == 0 {
            issues.push("metric cutoff k must be >= 1".to_string());
        }
        if self.train.epochs == 0 {
            issues.push("epochs must be >= 1".to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(issues.join("; ")))
        }
    }
}

/// Why a user is excluded from a level's evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    TooFewTrain,
    TooFewTest,
    EmptyReference,
    NoUnseenCandidates,
}

/// Per-user chronological train/test partition of one sample's positives.
#[derive(Debug, Clone, Default)]
pub struct UserSplit {
    /// Sorted distinct train item ids.
    pub train_items: Vec<u32>,
    /// Held-out most recent positive items.
    pub test_items: ItemSet,
    /// Items the user touched with only non-positive labels.
    pub zero_items: Vec<u32>,
    pub eligible: bool,
}

#[derive(Debug, Clone)]
pub struct LevelSplit {
    pub per_user: Vec<UserSplit>,
    pub exclusions: Vec<(UserId, ExclusionReason)>,
}

/// Chronological per-user holdout split of a sample.
///
/// Positives are deduplicated per (user, item) keeping the most recent
/// event; the most recent ceil(fraction * n) of them form the test set.
/// Users failing the floors are excluded from evaluation but keep all
/// their positives as training signal.
pub fn temporal_split<F: Real>(
    dataset: &Dataset<F>,
    sample: &TemporalSample,
    holdout_fraction: f64,
    min_train: usize,
    min_test: usize,
) -> LevelSplit {
    let mut per_user = Vec::with_capacity(sample.per_user.len());
    let mut exclusions = Vec::new();
    for (u, indices) in sample.per_user.iter().enumerate() {
        // dedup positives by item, keeping the latest event
        let mut latest: BTreeMap<u32, i64> = BTreeMap::new();
        let mut zero_items: Vec<u32> = Vec::new();
        for &idx in indices {
            let i = &dataset.interactions[idx];
            if i.positive {
                let e = latest.entry(i.item.0).or_insert(i.timestamp);
                if i.timestamp > *e {
                    *e = i.timestamp;
                }
            } else {
                zero_items.push(i.item.0);
            }
        }
        zero_items.sort_unstable();
        zero_items.dedup();
        zero_items.retain(|i| !latest.contains_key(i));

        let mut chronological: Vec<(i64, u32)> =
            latest.iter().map(|(&item, &ts)| (ts, item)).collect();
        chronological.sort_unstable();
        let n_pos = chronological.len();
        let n_test = ((holdout_fraction * n_pos as f64).ceil() as usize).min(n_pos);
        let n_train = n_pos - n_test;

        let eligible = n_train >= min_train && n_test >= min_test;
        if !eligible && n_pos > 0 {
            let reason = if n_train < min_train {
                ExclusionReason::TooFewTrain
            } else {
                ExclusionReason::TooFewTest
            };
            exclusions.push((UserId(u as u32), reason));
        }
        let test = if eligible {
            chronological.split_off(n_train)
        } else {
            Vec::new()
        };
        let train = chronological;
        let mut train_items: Vec<u32> = train.into_iter().map(|(_, i)| i).collect();
        train_items.sort_unstable();
        per_user.push(UserSplit {
            train_items,
            test_items: test.into_iter().map(|(_, i)| ItemId(i)).collect(),
            zero_items,
            eligible,
        });
    }
    LevelSplit {
        per_user,
        exclusions,
    }
}

/// The model actually trained for a level.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "algo", rename_all = "kebab-case")]
pub enum ChosenModel<F> {
    Bpr {
        learning_rate: F,
        embedding_dim: usize,
    },
    ItemKnn {
        k_neighbors: usize,
    },
}

/// One evaluated (level, repetition) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult<F> {
    pub level: usize,
    pub repetition: usize,
    pub seed: u64,
    pub chosen: ChosenModel<F>,
    pub per_user_miscalibration: BTreeMap<u32, F>,
    pub per_user_ndcg: BTreeMap<u32, F>,
    /// Absent when no user was evaluable.
    pub miscalibration: Option<SummaryStats<F>>,
    pub ndcg: Option<SummaryStats<F>>,
}

impl<F: Real> CellResult<F> {
    pub fn mean_miscalibration(&self) -> Option<F> {
        self.miscalibration.as_ref().map(|s| s.mean)
    }

    pub fn mean_ndcg(&self) -> Option<F> {
        self.ndcg.as_ref().map(|s| s.mean)
    }
}

/// Everything shared by the repetitions of one level.
pub struct LevelContext<F: Real> {
    pub level: usize,
    pub split: LevelSplit,
    pub train_data: TrainData,
    pub candidates: Vec<u32>,
    /// (user, reference items, test items) for each eligible user.
    pub eval_users: Vec<EvalUser>,
    pub exclusions: Vec<(UserId, ExclusionReason)>,
    _marker: std::marker::PhantomData<F>,
}

#[derive(Debug, Clone)]
pub struct EvalUser {
    pub user: UserId,
    pub train_set: ItemSet,
    pub reference: ItemSet,
    pub test: ItemSet,
}

impl<F: Real> LevelContext<F> {
    pub fn build(
        dataset: &Dataset<F>,
        window_split: &SubprofileSplit,
        level: usize,
        config: &ExperimentConfig<F>,
    ) -> Result<Self> {
        let sample = build_sample(window_split, level)?;
        let split = temporal_split(
            dataset,
            &sample,
            config.holdout_fraction,
            config.min_train,
            config.min_test,
        );
        let train_data = TrainData::new(
            dataset.n_users(),
            dataset.n_items(),
            split.per_user.iter().map(|s| s.train_items.clone()).collect(),
        )
        .with_zero_items(split.per_user.iter().map(|s| s.zero_items.clone()).collect());
        let candidates = train_data.items_with_positives();

        let mut exclusions = split.exclusions.clone();
        let mut eval_users = Vec::new();
        for (u, user_split) in split.per_user.iter().enumerate() {
            if !user_split.eligible {
                continue;
            }
            let user = UserId(u as u32);
            let train_set: ItemSet = user_split.train_items.iter().map(|&i| ItemId(i)).collect();
            if train_set.len() >= candidates.len() {
                exclusions.push((user, ExclusionReason::NoUnseenCandidates));
                continue;
            }
            let reference: ItemSet = match config.reference_mode {
                ReferenceMode::SampleProfile => train_set.clone(),
                ReferenceMode::RecentWindow => window_split.per_user[u][0]
                    .iter()
                    .filter(|&&idx| dataset.interactions[idx].positive)
                    .map(|&idx| dataset.interactions[idx].item)
                    .collect(),
            };
            if reference.is_empty() {
                exclusions.push((user, ExclusionReason::EmptyReference));
                continue;
            }
            eval_users.push(EvalUser {
                user,
                train_set,
                reference,
                test: user_split.test_items.clone(),
            });
        }
        Ok(Self {
            level,
            split,
            train_data,
            candidates,
            eval_users,
            exclusions,
            _marker: std::marker::PhantomData,
        })
    }
}

/// Score a trained model over the level's eligible users.
pub fn evaluate_model<F: Real, M: RecommenderModel<F> + ?Sized>(
    model: &M,
    ctx: &LevelContext<F>,
    dataset: &Dataset<F>,
    config: &ExperimentConfig<F>,
) -> Result<(BTreeMap<u32, F>, BTreeMap<u32, F>)> {
    let alpha = config.metric.smoothing_alpha;
    let k = config.metric.k;
    let mut mc_map = BTreeMap::new();
    let mut ndcg_map = BTreeMap::new();
    for eval in &ctx.eval_users {
        let rec = model.recommend(eval.user, &ctx.candidates, &eval.train_set, k)?;
        debug_assert!(
            rec.items.iter().all(|i| !eval.train_set.contains(i)),
            "train item leaked into recommendations"
        );
        let p = profile_distribution(&eval.reference, &dataset.catalog)
            .expect("eligible users have non-empty reference profiles");
        let q = recommendation_distribution(&rec, &dataset.catalog)?;
        mc_map.insert(eval.user.0, miscalibration(&p, &q, alpha)?);
        ndcg_map.insert(eval.user.0, ndcg_at_k(&rec, &eval.test, k));
    }
    Ok((mc_map, ndcg_map))
}

/// Train with the level's chosen model and this seed, then evaluate.
pub fn run_cell<F: Real>(
    ctx: &LevelContext<F>,
    chosen: &ChosenModel<F>,
    config: &ExperimentConfig<F>,
    dataset: &Dataset<F>,
    seed: u64,
    repetition: usize,
) -> Result<CellResult<F>> {
    let (mc, ndcg) = match chosen {
        ChosenModel::Bpr {
            learning_rate,
            embedding_dim,
        } => {
            let hp = BprHyperparams {
                learning_rate: *learning_rate,
                embedding_dim: *embedding_dim,
                l2_reg: config.train.l2_reg,
                epochs: config.train.epochs,
                negatives_per_positive: config.train.negatives_per_positive,
                seed,
            };
            let model = train_bpr(&ctx.train_data, &hp, config.train.negative_mode)?
                .with_sample_level(ctx.level);
            evaluate_model(&model, ctx, dataset, config)?
        }
        ChosenModel::ItemKnn { k_neighbors } => {
            let model = train_itemknn::<F>(&ctx.train_data, *k_neighbors);
            evaluate_model(&model, ctx, dataset, config)?
        }
    };
    let mc_values: Vec<F> = mc.values().copied().collect();
    let ndcg_values: Vec<F> = ndcg.values().copied().collect();
    Ok(CellResult {
        level: ctx.level,
        repetition,
        seed,
        chosen: chosen.clone(),
        miscalibration: SummaryStats::from_values(&mc_values),
        ndcg: SummaryStats::from_values(&ndcg_values),
        per_user_miscalibration: mc,
        per_user_ndcg: ndcg,
    })
}

/// Box-plot statistics over a pooled value set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryStats<F> {
    pub n: usize,
    pub mean: F,
    pub median: F,
    pub q1: F,
    pub q3: F,
    pub min: F,
    pub max: F,
}

/// Linear-interpolation quantile over sorted values.
fn quantile<F: Real>(sorted: &[F], q: f64) -> F {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = F::from_f64_lossy(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl<F: Real> SummaryStats<F> {
    /// `values` must be in a deterministic order; the mean sums them in
    /// that order before sorting a copy for the quantiles.
    pub fn from_values(values: &[F]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let sum = values.iter().fold(F::zero(), |acc, &v| acc + v);
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("metric values are not NaN"));
        Some(Self {
            n: sorted.len(),
            mean: sum / from_usize(values.len()),
            median: quantile(&sorted, 0.5),
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
            min: sorted[0],
            max: *sorted.last().unwrap(),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelAggregate<F> {
    pub level: usize,
    pub chosen: ChosenModel<F>,
    pub eligible_users: usize,
    pub interactions: usize,
    /// Pooled per-user values across repetitions.
    pub miscalibration: Option<SummaryStats<F>>,
    pub ndcg: Option<SummaryStats<F>>,
    pub per_repetition_mean_miscalibration: Vec<Option<F>>,
    pub per_repetition_mean_ndcg: Vec<Option<F>>,
    pub grid_trace: Option<Vec<GridPoint<F>>>,
    pub exclusions: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentLevelStats<F> {
    pub factor: SegmentFactor,
    pub segment: Segment,
    pub level: usize,
    /// Absent when the segment has no eligible users at this level.
    pub miscalibration: Option<SummaryStats<F>>,
    pub ndcg: Option<SummaryStats<F>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentArgmin {
    pub factor: SegmentFactor,
    pub segment: Segment,
    pub argmin_miscalibration_level: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult<F: Real> {
    pub n_levels: usize,
    pub truncated_interactions: usize,
    pub argmin_miscalibration_level: Option<usize>,
    pub levels: Vec<LevelAggregate<F>>,
    pub segments: Vec<SegmentLevelStats<F>>,
    pub segment_argmin: Vec<SegmentArgmin>,
    #[serde(skip)]
    pub cells: Vec<CellResult<F>>,
    #[serde(skip)]
    pub assignments: Vec<UserSegmentAssignment<F>>,
}

/// A cell failed; everything completed before it is preserved so the
/// caller can persist a partial manifest.
#[derive(Debug)]
pub struct ExperimentFailure<F> {
    pub level: Option<usize>,
    pub repetition: Option<usize>,
    pub error: Error,
    pub completed: Vec<CellResult<F>>,
}

impl<F> fmt::Display for ExperimentFailure<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.level, self.repetition) {
            (Some(l), Some(r)) => write!(
                f,
                "cell (level {l}, repetition {r}) failed after {} completed cells: {}",
                self.completed.len(),
                self.error
            ),
            (Some(l), None) => write!(f, "level {l} setup failed: {}", self.error),
            _ => write!(f, "{}", self.error),
        }
    }
}

impl<F: fmt::Debug> std::error::Error for ExperimentFailure<F> {}

fn fail<F>(level: Option<usize>, repetition: Option<usize>, error: Error) -> ExperimentFailure<F> {
    ExperimentFailure {
        level,
        repetition,
        error,
        completed: Vec::new(),
    }
}

/// Run the whole workflow over every level 1..=n.
pub fn run_experiment<F: Real>(
    dataset: &Dataset<F>,
    config: &ExperimentConfig<F>,
) -> std::result::Result<ExperimentResult<F>, ExperimentFailure<F>> {
    config.validate().map_err(|e| fail(None, None, e))?;
    let assignments = segment_users(dataset).map_err(|e| fail(None, None, e))?;
    let window_split =
        split_profiles(dataset, &config.window).map_err(|e| fail(None, None, e))?;
    let n_levels = window_split.n_windows;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| fail(None, None, Error::Other(e.to_string())))?;

    let mut cells: Vec<CellResult<F>> = Vec::with_capacity(n_levels * config.repetitions);
    let mut levels: Vec<LevelAggregate<F>> = Vec::with_capacity(n_levels);

    for level in 1..=n_levels {
        let ctx = LevelContext::build(dataset, &window_split, level, config)
            .map_err(|e| fail(Some(level), None, e))?;

        // tune once per level with the first repetition's seed, then
        // freeze the choice for all repetitions
        let (chosen, trace) = match config.algo {
            Algo::Bpr => {
                let validation: Vec<(UserId, ItemSet)> = ctx
                    .eval_users
                    .iter()
                    .map(|e| (e.user, e.test.clone()))
                    .collect();
                let outcome = pool
                    .install(|| {
                        grid_search(
                            &ctx.train_data,
                            &validation,
                            &config.grid,
                            &config.train,
                            config.metric.k,
                            config.seeds[0],
                        )
                    })
                    .map_err(|e| ExperimentFailure {
                        level: Some(level),
                        repetition: None,
                        error: e,
                        completed: cells.clone(),
                    })?;
                (
                    ChosenModel::Bpr {
                        learning_rate: outcome.best.learning_rate,
                        embedding_dim: outcome.best.embedding_dim,
                    },
                    Some(outcome.trace),
                )
            }
            Algo::ItemKnn => (
                ChosenModel::ItemKnn {
                    k_neighbors: config.knn_neighbors,
                },
                None,
            ),
        };

        let rep_results: Vec<Result<CellResult<F>>> = pool.install(|| {
            config
                .seeds
                .par_iter()
                .enumerate()
                .map(|(rep, &seed)| run_cell(&ctx, &chosen, config, dataset, seed, rep))
                .collect()
        });
        let mut level_cells = Vec::with_capacity(config.repetitions);
        for (rep, result) in rep_results.into_iter().enumerate() {
            match result {
                Ok(cell) => level_cells.push(cell),
                Err(e) => {
                    let mut completed = cells;
                    completed.extend(level_cells);
                    return Err(ExperimentFailure {
                        level: Some(level),
                        repetition: Some(rep),
                        error: e,
                        completed,
                    });
                }
            }
        }

        let mut exclusion_counts: BTreeMap<String, usize> = BTreeMap::new();
        for (_, reason) in &ctx.exclusions {
            *exclusion_counts
                .entry(format!("{reason:?}"))
                .or_default() += 1;
        }
        let pooled_mc = pool_values(&level_cells, |c| &c.per_user_miscalibration, None);
        let pooled_ndcg = pool_values(&level_cells, |c| &c.per_user_ndcg, None);
        levels.push(LevelAggregate {
            level,
            chosen: chosen.clone(),
            eligible_users: ctx.eval_users.len(),
            interactions: ctx.train_data.pairs.len(),
            miscalibration: SummaryStats::from_values(&pooled_mc),
            ndcg: SummaryStats::from_values(&pooled_ndcg),
            per_repetition_mean_miscalibration: level_cells
                .iter()
                .map(|c| c.mean_miscalibration())
                .collect(),
            per_repetition_mean_ndcg: level_cells.iter().map(|c| c.mean_ndcg()).collect(),
            grid_trace: trace,
            exclusions: exclusion_counts,
        });
        cells.extend(level_cells);
    }

    let (segments, segment_argmin) = aggregate_by_segment(&cells, &assignments, n_levels);
    let argmin = argmin_level(levels.iter().map(|l| (l.level, l.miscalibration.as_ref())));

    Ok(ExperimentResult {
        n_levels,
        truncated_interactions: window_split.truncated,
        argmin_miscalibration_level: argmin,
        levels,
        segments,
        segment_argmin,
        cells,
        assignments,
    })
}

/// Pool per-user values of one level's cells in (repetition, user) order,
/// optionally restricted to a user subset.
fn pool_values<F: Real>(
    cells: &[CellResult<F>],
    map: impl Fn(&CellResult<F>) -> &BTreeMap<u32, F>,
    users: Option<&ItemSetLike>,
) -> Vec<F> {
    let mut out = Vec::new();
    for cell in cells {
        for (&user, &value) in map(cell) {
            if users.is_none_or(|set| set.contains(&user)) {
                out.push(value);
            }
        }
    }
    out
}

type ItemSetLike = std::collections::BTreeSet<u32>;

fn argmin_level<'a, F: Real + 'a>(
    stats: impl Iterator<Item = (usize, Option<&'a SummaryStats<F>>)>,
) -> Option<usize> {
    let mut best: Option<(usize, F)> = None;
    for (level, s) in stats {
        if let Some(s) = s {
            if best.is_none_or(|(_, m)| s.mean < m) {
                best = Some((level, s.mean));
            }
        }
    }
    best.map(|(l, _)| l)
}

/// Per-(factor, segment, level) statistics pooled over the segment's
/// users, with per-segment argmin levels. Empty segments are reported as
/// absent, never as zero.
pub fn aggregate_by_segment<F: Real>(
    cells: &[CellResult<F>],
    assignments: &[UserSegmentAssignment<F>],
    n_levels: usize,
) -> (Vec<SegmentLevelStats<F>>, Vec<SegmentArgmin>) {
    // canonical (level, repetition) order keeps float sums independent of
    // cell completion order
    let mut cells: Vec<&CellResult<F>> = cells.iter().collect();
    cells.sort_by_key(|c| (c.level, c.repetition));
    let mut stats = Vec::new();
    let mut argmins = Vec::new();
    for factor in [SegmentFactor::Activity, SegmentFactor::Entropy] {
        for segment in [Segment::Low, Segment::Mid, Segment::High] {
            let members: ItemSetLike = assignments
                .iter()
                .filter(|a| match factor {
                    SegmentFactor::Activity => a.activity_segment == segment,
                    SegmentFactor::Entropy => a.entropy_segment == segment,
                })
                .map(|a| a.user.0)
                .collect();
            let mut per_level: Vec<(usize, Option<SummaryStats<F>>)> = Vec::new();
            for level in 1..=n_levels {
                let level_cells: Vec<&CellResult<F>> =
                    cells.iter().filter(|c| c.level == level).copied().collect();
                let mc: Vec<F> = level_cells
                    .iter()
                    .flat_map(|c| {
                        c.per_user_miscalibration
                            .iter()
                            .filter(|(u, _)| members.contains(u))
                            .map(|(_, &v)| v)
                    })
                    .collect();
                let ndcg: Vec<F> = level_cells
                    .iter()
                    .flat_map(|c| {
                        c.per_user_ndcg
                            .iter()
                            .filter(|(u, _)| members.contains(u))
                            .map(|(_, &v)| v)
                    })
                    .collect();
                let mc_stats = SummaryStats::from_values(&mc);
                per_level.push((level, mc_stats.clone()));
                stats.push(SegmentLevelStats {
                    factor,
                    segment,
                    level,
                    miscalibration: mc_stats,
                    ndcg: SummaryStats::from_values(&ndcg),
                });
            }
            argmins.push(SegmentArgmin {
                factor,
                segment,
                argmin_miscalibration_level: argmin_level(
                    per_level.iter().map(|(l, s)| (*l, s.as_ref())),
                ),
            });
        }
    }
    (stats, argmins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CategoryCatalog, CategoryId, Interaction};
    use crate::recommend::CategoryMirror;
    use crate::synthetic::{generate_drift_dataset, DriftSpec};

    fn tiny_drift() -> Dataset<f64> {
        let spec = DriftSpec {
            n_users: 24,
            n_items: 60,
            n_categories: 6,
            windows: 3,
            shift_at: 2,
            interactions_per_user_per_window: 12,
            seed: 99,
            ..DriftSpec::default()
        };
        generate_drift_dataset(&spec).unwrap().0
    }

    fn fast_config() -> ExperimentConfig<f64> {
        ExperimentConfig {
            repetitions: 2,
            seeds: vec![1, 2],
            grid: HyperGrid {
                learning_rates: vec![0.05],
                embedding_dims: vec![8],
            },
            train: BprTrainSettings {
                epochs: 8,
                ..BprTrainSettings::default()
            },
            min_train: 2,
            min_test: 1,
            ..ExperimentConfig::default()
        }
    }

    fn flat_dataset(per_user: &[&[(u32, i64, bool)]]) -> Dataset<f64> {
        let n_items = per_user
            .iter()
            .flat_map(|rows| rows.iter().map(|r| r.0))
            .max()
            .unwrap()
            + 1;
        let mut interactions = Vec::new();
        for (u, rows) in per_user.iter().enumerate() {
            for &(item, ts, positive) in rows.iter() {
                interactions.push(Interaction {
                    user: UserId(u as u32),
                    item: ItemId(item),
                    timestamp: ts,
                    positive,
                    raw_signal: None,
                });
            }
        }
        interactions.sort_by_key(|i| (i.timestamp, i.user, i.item));
        Dataset {
            interactions,
            catalog: CategoryCatalog {
                category_names: vec!["c".into()],
                shares: (0..n_items).map(|_| vec![(CategoryId(0), 1.0)]).collect(),
            },
            user_keys: (0..per_user.len()).map(|u| format!("u{u}")).collect(),
            item_keys: (0..n_items).map(|i| format!("i{i}")).collect(),
        }
    }

    #[test]
    fn split_takes_most_recent_positives_as_test() {
        let rows: Vec<(u32, i64, bool)> =
            (0..10).map(|i| (i as u32, 100 + i as i64, true)).collect();
        let d = flat_dataset(&[&rows]);
        let sample = TemporalSample {
            level: 1,
            per_user: vec![(0..10).collect()],
        };
        let split = temporal_split(&d, &sample, 0.2, 1, 1);
        let s = &split.per_user[0];
        assert!(s.eligible);
        assert_eq!(s.test_items.len(), 2);
        assert!(s.test_items.contains(&ItemId(8)) && s.test_items.contains(&ItemId(9)));
        assert_eq!(s.train_items.len(), 8);
    }

    #[test]
    fn split_excludes_users_below_the_floors() {
        let rows: Vec<(u32, i64, bool)> = (0..3).map(|i| (i as u32, 100 + i as i64, true)).collect();
        let d = flat_dataset(&[&rows]);
        let sample = TemporalSample {
            level: 1,
            per_user: vec![(0..3).collect()],
        };
        let split = temporal_split(&d, &sample, 0.2, 5, 1);
        assert!(!split.per_user[0].eligible);
        assert_eq!(split.exclusions, vec![(UserId(0), ExclusionReason::TooFewTrain)]);
        // all positives stay available as training signal
        assert_eq!(split.per_user[0].train_items.len(), 3);
        assert!(split.per_user[0].test_items.is_empty());
    }

    #[test]
    fn split_matches_sort_and_slice_oracle_on_interleaved_timestamps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(77);
        let mut rows: Vec<(u32, i64, bool)> = (0..20u32)
            .map(|i| (i, rng.gen_range(1..1_000_000), true))
            .collect();
        // one duplicate item with an older extra event: dedup keeps latest
        rows.push((5, 1_500_000, true));
        let d = flat_dataset(&[&rows]);
        let sample = TemporalSample {
            level: 1,
            per_user: vec![(0..rows.len()).collect()],
        };
        let split = temporal_split(&d, &sample, 0.3, 1, 1);

        // oracle: dedup keep-latest, sort by (ts, item), slice the tail
        let mut latest: BTreeMap<u32, i64> = BTreeMap::new();
        for &(item, ts, _) in &rows {
            let e = latest.entry(item).or_insert(ts);
            if ts > *e {
                *e = ts;
            }
        }
        let mut chron: Vec<(i64, u32)> = latest.iter().map(|(&i, &t)| (t, i)).collect();
        chron.sort_unstable();
        let n_test = (0.3f64 * chron.len() as f64).ceil() as usize;
        let expected_test: ItemSet = chron[chron.len() - n_test..]
            .iter()
            .map(|&(_, i)| ItemId(i))
            .collect();
        assert_eq!(split.per_user[0].test_items, expected_test);
        assert_eq!(
            split.per_user[0].train_items.len() + n_test,
            chron.len()
        );
    }

    #[test]
    fn zero_labeled_items_form_the_negative_pool() {
        let rows: Vec<(u32, i64, bool)> = vec![
            (0, 100, true),
            (1, 110, true),
            (2, 120, false),
            (3, 130, false),
            (3, 140, true), // positive wins over an earlier zero
        ];
        let d = flat_dataset(&[&rows]);
        let sample = TemporalSample {
            level: 1,
            per_user: vec![(0..rows.len()).collect()],
        };
        let split = temporal_split(&d, &sample, 0.34, 1, 1);
        assert_eq!(split.per_user[0].zero_items, vec![2]);
    }

    #[test]
    fn mirror_recommender_has_zero_miscalibration_at_every_level() {
        // spread preferences and roomy category pools keep the mirror
        // feasible: every user needs an unseen same-category substitute
        // for each train item
        let spec = DriftSpec {
            n_users: 16,
            n_items: 120,
            n_categories: 6,
            windows: 3,
            shift_at: 1,
            pre_concentration: 2.0,
            orthogonal_supports: false,
            interactions_per_user_per_window: 6,
            seed: 42,
            ..DriftSpec::default()
        };
        let (dataset, _) = generate_drift_dataset::<f64>(&spec).unwrap();
        let config = ExperimentConfig::<f64> {
            metric: MetricConfig {
                smoothing_alpha: 0.0,
                k: 10,
            },
            min_train: 1,
            min_test: 1,
            ..fast_config()
        };
        let window_split = split_profiles(&dataset, &config.window).unwrap();
        for level in 1..=window_split.n_windows {
            let ctx = LevelContext::build(&dataset, &window_split, level, &config).unwrap();
            let mirror =
                CategoryMirror::new(&dataset.catalog, &ctx.train_data.user_items).unwrap();
            let (mc, _) = evaluate_model(&mirror, &ctx, &dataset, &config).unwrap();
            assert!(!mc.is_empty());
            for (user, value) in mc {
                assert_eq!(value, 0.0, "user {user} level {level}");
            }
        }
    }

    #[test]
    fn random_policy_is_more_miscalibrated_than_mirror_on_skewed_data() {
        use crate::recommend::RandomRanker;
        // skewed per-user tastes over a uniform item pool; pools are large
        // enough that the mirror always finds substitutes
        let spec = DriftSpec {
            n_users: 30,
            n_items: 180,
            n_categories: 6,
            windows: 2,
            shift_at: 1,
            pre_concentration: 1.0,
            interactions_per_user_per_window: 8,
            orthogonal_supports: false,
            seed: 3,
            ..DriftSpec::default()
        };
        let (dataset, _) = generate_drift_dataset::<f64>(&spec).unwrap();
        let config = ExperimentConfig::<f64> {
            min_train: 1,
            min_test: 1,
            ..fast_config()
        };
        let window_split = split_profiles(&dataset, &config.window).unwrap();
        let ctx = LevelContext::build(&dataset, &window_split, 1, &config).unwrap();
        let mean_of = |map: &BTreeMap<u32, f64>| -> f64 {
            map.values().sum::<f64>() / map.len() as f64
        };
        let mirror = CategoryMirror::new(&dataset.catalog, &ctx.train_data.user_items).unwrap();
        let (mirror_mc, _) = evaluate_model(&mirror, &ctx, &dataset, &config).unwrap();
        let mut random_means = Vec::new();
        for seed in 0..4u64 {
            let random = RandomRanker {
                n_users: dataset.n_users(),
                seed,
            };
            let (mc, _) = evaluate_model(&random, &ctx, &dataset, &config).unwrap();
            random_means.push(mean_of(&mc));
        }
        let random_mean = random_means.iter().sum::<f64>() / random_means.len() as f64;
        assert!(random_mean > mean_of(&mirror_mc) + 0.05);
    }

    #[test]
    fn single_window_run_has_argmin_one() {
        let spec = DriftSpec {
            n_users: 15,
            n_items: 40,
            n_categories: 4,
            windows: 1,
            shift_at: 1,
            interactions_per_user_per_window: 20,
            seed: 12,
            ..DriftSpec::default()
        };
        let (dataset, _) = generate_drift_dataset::<f64>(&spec).unwrap();
        let result = run_experiment(&dataset, &fast_config()).unwrap();
        assert_eq!(result.n_levels, 1);
        assert_eq!(result.argmin_miscalibration_level, Some(1));
    }

    #[test]
    fn cell_bookkeeping_is_levels_times_repetitions() {
        let dataset = tiny_drift();
        let result = run_experiment(&dataset, &fast_config()).unwrap();
        assert_eq!(result.n_levels, 3);
        assert_eq!(result.cells.len(), 3 * 2);
        for level in 1..=3 {
            for rep in 0..2 {
                assert!(result
                    .cells
                    .iter()
                    .any(|c| c.level == level && c.repetition == rep));
            }
        }
        // per-user maps cover the same users in both metrics
        for cell in &result.cells {
            let mc_users: Vec<u32> = cell.per_user_miscalibration.keys().copied().collect();
            let ndcg_users: Vec<u32> = cell.per_user_ndcg.keys().copied().collect();
            assert_eq!(mc_users, ndcg_users);
        }
    }

    #[test]
    fn changing_one_seed_only_changes_that_repetition() {
        let dataset = tiny_drift();
        let base = fast_config();
        let mut other = base.clone();
        other.seeds = vec![1, 3]; // repetition 1 differs, repetition 0 shared
        let a = run_experiment(&dataset, &base).unwrap();
        let b = run_experiment(&dataset, &other).unwrap();
        for level in 1..=a.n_levels {
            let cell = |r: &ExperimentResult<f64>, rep: usize| {
                r.cells
                    .iter()
                    .find(|c| c.level == level && c.repetition == rep)
                    .unwrap()
                    .clone()
            };
            assert_eq!(
                cell(&a, 0).per_user_miscalibration,
                cell(&b, 0).per_user_miscalibration
            );
            assert_ne!(
                cell(&a, 1).per_user_miscalibration,
                cell(&b, 1).per_user_miscalibration
            );
        }
    }

    #[test]
    fn aggregated_mean_matches_mean_of_user_values() {
        let dataset = tiny_drift();
        let result = run_experiment(&dataset, &fast_config()).unwrap();
        for level in &result.levels {
            let values: Vec<f64> = result
                .cells
                .iter()
                .filter(|c| c.level == level.level)
                .flat_map(|c| c.per_user_miscalibration.values().copied())
                .collect();
            let naive = values.iter().sum::<f64>() / values.len() as f64;
            assert!((level.miscalibration.as_ref().unwrap().mean - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregation_is_invariant_to_cell_order() {
        let dataset = tiny_drift();
        let result = run_experiment(&dataset, &fast_config()).unwrap();
        let mut shuffled = result.cells.clone();
        shuffled.reverse();
        let (a, arg_a) = aggregate_by_segment(&result.cells, &result.assignments, result.n_levels);
        let (b, arg_b) = aggregate_by_segment(&shuffled, &result.assignments, result.n_levels);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.miscalibration.as_ref().map(|s| s.mean),
                       y.miscalibration.as_ref().map(|s| s.mean));
        }
        assert_eq!(
            arg_a.iter().map(|s| s.argmin_miscalibration_level).collect::<Vec<_>>(),
            arg_b.iter().map(|s| s.argmin_miscalibration_level).collect::<Vec<_>>()
        );
    }

    #[test]
    fn one_segment_holding_everyone_matches_global_stats() {
        let dataset = tiny_drift();
        let result = run_experiment(&dataset, &fast_config()).unwrap();
        // synthetic users share the same activity count, so the activity
        // tie rule puts everyone in `low`
        let low_all: Vec<&SegmentLevelStats<f64>> = result
            .segments
            .iter()
            .filter(|s| s.factor == SegmentFactor::Activity && s.segment == Segment::Low)
            .collect();
        for stats in low_all {
            let global = &result.levels[stats.level - 1];
            assert_eq!(
                stats.miscalibration.as_ref().map(|s| s.mean),
                global.miscalibration.as_ref().map(|s| s.mean)
            );
        }
        // and mid/high are absent, not zero
        assert!(result
            .segments
            .iter()
            .filter(|s| s.factor == SegmentFactor::Activity && s.segment != Segment::Low)
            .all(|s| s.miscalibration.is_none()));
    }

    #[test]
    fn segment_means_match_hand_computation_on_fixed_cells() {
        let mk_cell = |level: usize, values: &[(u32, f64)]| CellResult::<f64> {
            level,
            repetition: 0,
            seed: 1,
            chosen: ChosenModel::ItemKnn { k_neighbors: 1 },
            per_user_miscalibration: values.iter().copied().collect(),
            per_user_ndcg: values.iter().map(|&(u, v)| (u, v * 0.5)).collect(),
            miscalibration: None,
            ndcg: None,
        };
        let cells = vec![mk_cell(1, &[(0, 0.2), (1, 0.4), (2, 0.9)])];
        let assignments: Vec<UserSegmentAssignment<f64>> = [
            (0, Segment::Low),
            (1, Segment::Low),
            (2, Segment::High),
        ]
        .iter()
        .map(|&(u, seg)| UserSegmentAssignment {
            user: UserId(u),
            activity_segment: seg,
            entropy_segment: seg,
            activity_value: 0,
            entropy_value: 0.0,
        })
        .collect();
        let (stats, _) = aggregate_by_segment(&cells, &assignments, 1);
        let low = stats
            .iter()
            .find(|s| s.factor == SegmentFactor::Activity && s.segment == Segment::Low)
            .unwrap();
        assert!((low.miscalibration.as_ref().unwrap().mean - 0.3).abs() < 1e-12);
        let mid = stats
            .iter()
            .find(|s| s.factor == SegmentFactor::Activity && s.segment == Segment::Mid)
            .unwrap();
        assert!(mid.miscalibration.is_none());
        let high = stats
            .iter()
            .find(|s| s.factor == SegmentFactor::Activity && s.segment == Segment::High)
            .unwrap();
        assert!((high.miscalibration.as_ref().unwrap().mean - 0.9).abs() < 1e-12);
    }

    #[test]
    fn config_validation_enumerates_every_issue() {
        let config = ExperimentConfig::<f64> {
            repetitions: 3,
            seeds: vec![1, 2],
            holdout_fraction: 1.5,
            min_train: 0,
            ..ExperimentConfig::default()
        };
        let err = config.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("repetitions"));
        assert!(msg.contains("holdout_fraction"));
        assert!(msg.contains("min_train"));
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let values = vec![1.0f64, 2.0, 3.0, 4.0];
        let stats = SummaryStats::from_values(&values).unwrap();
        assert_eq!(stats.median, 2.5);
        assert_eq!(stats.q1, 1.75);
        assert_eq!(stats.q3, 3.25);
        assert_eq!(stats.min, 1.0);
        assert_eq!(stats.max, 4.0);
    }

    #[test]
    fn golden_cell_snapshot() {
        // frozen from the first verified run; guards numerical drift
        let dataset = tiny_drift();
        let config = fast_config();
        let window_split = split_profiles(&dataset, &config.window).unwrap();
        let ctx = LevelContext::build(&dataset, &window_split, 2, &config).unwrap();
        let chosen = ChosenModel::Bpr {
            learning_rate: 0.05,
            embedding_dim: 8,
        };
        let cell = run_cell(&ctx, &chosen, &config, &dataset, 1, 0).unwrap();
        assert_eq!(cell.per_user_miscalibration.len(), GOLDEN_USERS);
        assert_eq!(cell.mean_miscalibration().unwrap().to_bits(), GOLDEN_MEAN_MC);
        assert_eq!(cell.mean_ndcg().unwrap().to_bits(), GOLDEN_MEAN_NDCG);
    }

    // captured once from the first implementation run whose metrics had
    // been verified against the hand oracles (mc 2.269832615940222,
    // ndcg 0.035684302957442376)
    const GOLDEN_USERS: usize = 24;
    const GOLDEN_MEAN_MC: u64 = 4612293627461688299;
    const GOLDEN_MEAN_NDCG: u64 = 4585303471067862060;
}
