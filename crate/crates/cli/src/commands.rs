use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;

use dyncal_core::experiment::{run_experiment, Algo, ExperimentConfig, ReferenceMode};
use dyncal_core::ingest::{
    self, canonicalize, filter_interactions, label_by_threshold, parse_categories,
    parse_interactions, AnnualRule, ColumnMap, FilterSpec,
};
use dyncal_core::model::{dataset_stats, validate, Dataset};
use dyncal_core::recommend::NegativeMode;
use dyncal_core::report::{
    read_results_csv, write_global_report, write_partial_manifest, write_results_csv,
    write_segment_report, write_summary_json, write_window_grid_csv,
};
use dyncal_core::segment::write_assignments;
use dyncal_core::synthetic::{generate_drift_dataset, DriftSpec};
use dyncal_core::timeutil::{parse_timestamp, parse_width};
use dyncal_core::window::{window_grid, WindowWidth};
use dyncal_core::Scalar;

use crate::manifest::ManifestBuilder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Kuairec,
    Goodreads,
    Generic,
}

#[derive(Args)]
pub struct IngestArgs {
    /// Interaction log CSV (user_id,item_id,timestamp[,label][,signal]).
    #[arg(long)]
    pub interactions: PathBuf,
    /// Category CSV (item_id,categories; pipe-delimited categories).
    #[arg(long)]
    pub categories: PathBuf,
    /// Preprocessing profile bundling the dataset-specific filters.
    #[arg(long, value_enum, default_value = "generic")]
    pub profile: Profile,
    /// Positive-label cutoff on the signal column (overrides the profile).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Apply the annual-activity bound to the range average instead of
    /// requiring it in every year.
    #[arg(long)]
    pub annual_average: bool,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Column-name overrides for nonstandard headers.
    #[arg(long, default_value = "user_id")]
    pub user_col: String,
    #[arg(long, default_value = "item_id")]
    pub item_col: String,
    #[arg(long, default_value = "timestamp")]
    pub time_col: String,
    #[arg(long, default_value = "label")]
    pub label_col: String,
    #[arg(long, default_value = "signal")]
    pub signal_col: String,
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new(
        "ingest",
        serde_json::json!({
            "interactions": args.interactions,
            "categories": args.categories,
            "profile": format!("{:?}", args.profile),
            "threshold": args.threshold,
            "annual_average": args.annual_average,
        }),
    );
    manifest
        .input(&args.interactions)
        .with_context(|| format!("interaction log `{}` (--interactions)", args.interactions.display()))?;
    manifest
        .input(&args.categories)
        .with_context(|| format!("category file `{}` (--categories)", args.categories.display()))?;

    let mut spec = match args.profile {
        Profile::Kuairec => FilterSpec::kuairec(),
        Profile::Goodreads => FilterSpec::goodreads(),
        Profile::Generic => FilterSpec::default(),
    };
    if args.threshold.is_some() {
        spec.signal_threshold = args.threshold;
    }
    if args.annual_average {
        spec.annual_rule = AnnualRule::Average;
    }
    let columns = ColumnMap {
        user: args.user_col,
        item: args.item_col,
        timestamp: args.time_col,
        label: Some(args.label_col),
        signal: Some(args.signal_col),
    };

    manifest.stage("parse");
    let (mut records, rejects) = parse_interactions(&args.interactions, &columns)?;
    if let Some(threshold) = spec.signal_threshold {
        records = label_by_threshold(records, threshold)?;
    }

    manifest.stage("filter");
    let (records, report) = filter_interactions(records, &spec)?;
    if let Some(stage) = &report.emptied_at_stage {
        eprintln!("warning: filtering emptied the dataset at stage `{stage}`");
    }

    std::fs::create_dir_all(&args.out_dir)?;
    let rejects_path = args.out_dir.join("rejects.csv");
    ingest::write_rejects(&rejects_path, &rejects)?;
    let report_path = args.out_dir.join("filter_report.json");
    serde_json::to_writer_pretty(std::fs::File::create(&report_path)?, &report)?;

    manifest.stage("canonicalize");
    if records.is_empty() {
        eprintln!("warning: no interactions survived; wrote reports only");
        manifest.output(&rejects_path)?;
        manifest.output(&report_path)?;
        manifest.write(&args.out_dir)?;
        return Ok(());
    }
    let categories = parse_categories(&args.categories)?;
    let dataset: Dataset<Scalar> = canonicalize(records, &categories)?;
    let violations = validate(&dataset);
    if !violations.is_empty() {
        for v in violations.iter().take(10) {
            eprintln!("violation: {v}");
        }
        bail!(dyncal_core::Error::InvalidConfig(format!(
            "canonical dataset has {} violations",
            violations.len()
        )));
    }
    ingest::save_canonical(&dataset, &args.out_dir)?;

    let stats = dataset_stats(&dataset)?;
    let stats_path = args.out_dir.join("stats.csv");
    {
        let mut w = csv::Writer::from_path(&stats_path)?;
        w.write_record(["n_users", "n_items", "n_categories", "n_interactions", "sparsity"])?;
        w.write_record([
            stats.n_users.to_string(),
            stats.n_items.to_string(),
            stats.n_categories.to_string(),
            stats.n_interactions.to_string(),
            stats.sparsity.to_string(),
        ])?;
        w.flush()?;
    }
    println!(
        "ingested {} interactions: {} users, {} items, {} categories, sparsity {:.1}%",
        dataset.interactions.len(),
        stats.n_users,
        stats.n_items,
        stats.n_categories,
        stats.sparsity * 100.0
    );

    for file in ["interactions.csv", "categories.csv", "users.csv", "items.csv"] {
        manifest.output(&args.out_dir.join(file))?;
    }
    manifest.output(&stats_path)?;
    manifest.output(&rejects_path)?;
    manifest.output(&report_path)?;
    manifest.write(&args.out_dir)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Bpr,
    Itemknn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceModeArg {
    SampleProfile,
    RecentWindow,
}

/// Optional TOML config; every CLI flag overrides its key.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    width: Option<String>,
    calendar_months: Option<u32>,
    anchor: Option<String>,
    levels: Option<usize>,
    holdout: Option<f64>,
    min_train: Option<usize>,
    min_test: Option<usize>,
    reps: Option<usize>,
    seeds: Option<Vec<u64>>,
    algo: Option<String>,
    grid_lr: Option<Vec<f64>>,
    grid_dim: Option<Vec<usize>>,
    alpha: Option<f64>,
    k: Option<usize>,
    epochs: Option<usize>,
    l2: Option<f64>,
    negatives: Option<usize>,
    negative_mode: Option<String>,
    reference_mode: Option<String>,
    knn_k: Option<usize>,
    jobs: Option<usize>,
}

#[derive(Args)]
pub struct RunArgs {
    /// Canonical dataset directory produced by `ingest` or `synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Window width, e.g. 1d, 7d, 6mo.
    #[arg(long)]
    pub width: Option<String>,
    /// Calendar-month window width (overrides --width).
    #[arg(long)]
    pub calendar_months: Option<u32>,
    /// Window anchor: epoch seconds or ISO date (defaults to the newest
    /// interaction).
    #[arg(long)]
    pub anchor: Option<String>,
    /// Cap on the number of window levels.
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub min_train: Option<usize>,
    #[arg(long)]
    pub min_test: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated repetition seeds; must match --reps.
    #[arg(long, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    pub algo: Option<AlgoArg>,
    /// Comma-separated learning-rate grid.
    #[arg(long, value_delimiter = ',')]
    pub grid_lr: Option<Vec<f64>>,
    /// Comma-separated embedding-size grid.
    #[arg(long, value_delimiter = ',')]
    pub grid_dim: Option<Vec<usize>>,
    /// KL smoothing toward the profile distribution.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long, value_enum)]
    pub reference_mode: Option<ReferenceModeArg>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    /// Concurrent cells; 0 uses all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig<Scalar>> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("config file `{}`", path.display()))?;
            toml::from_str(&text).map_err(|e| {
                anyhow::Error::new(dyncal_core::Error::InvalidConfig(e.to_string()))
            })?
        }
        None => FileConfig::default(),
    };
    let mut config = ExperimentConfig::<Scalar>::default();

    let width_str = args.width.clone().or(file.width);
    let calendar = args.calendar_months.or(file.calendar_months);
    config.window.width = match (calendar, width_str) {
        (Some(months), _) => WindowWidth::CalendarMonths(months),
        (None, Some(w)) => WindowWidth::Seconds(parse_width(&w)?),
        (None, None) => WindowWidth::Seconds(86_400),
    };
    if let Some(anchor) = args.anchor.clone().or(file.anchor) {
        config.window.anchor = Some(parse_timestamp(&anchor)?);
    }
    config.window.max_windows = args.levels.or(file.levels);
    if let Some(v) = args.holdout.or(file.holdout) {
        config.holdout_fraction = v;
    }
    if let Some(v) = args.min_train.or(file.min_train) {
        config.min_train = v;
    }
    if let Some(v) = args.min_test.or(file.min_test) {
        config.min_test = v;
    }
    if let Some(v) = args.reps.or(file.reps) {
        config.repetitions = v;
        config.seeds = (1..=v as u64).collect();
    }
    if let Some(seeds) = args.seed_list.clone().or(file.seeds) {
        config.seeds = seeds;
    }
    config.algo = match args.algo {
        Some(AlgoArg::Bpr) => Algo::Bpr,
        Some(AlgoArg::Itemknn) => Algo::ItemKnn,
        None => match file.algo.as_deref() {
            Some("bpr") | None => Algo::Bpr,
            Some("itemknn") => Algo::ItemKnn,
            Some(other) => bail!(dyncal_core::Error::InvalidConfig(format!(
                "unknown algo `{other}`"
            ))),
        },
    };
    if let Some(lrs) = args.grid_lr.clone().or(file.grid_lr) {
        config.grid.learning_rates = lrs;
    }
    if let Some(dims) = args.grid_dim.clone().or(file.grid_dim) {
        config.grid.embedding_dims = dims;
    }
    if let Some(v) = args.alpha.or(file.alpha) {
        config.metric.smoothing_alpha = v;
    }
    if let Some(v) = args.k.or(file.k) {
        config.metric.k = v;
    }
    if let Some(v) = args.epochs.or(file.epochs) {
        config.train.epochs = v;
    }
    if let Some(v) = args.l2.or(file.l2) {
        config.train.l2_reg = v;
    }
    if let Some(v) = args.negatives.or(file.negatives) {
        config.train.negatives_per_positive = v;
    }
    config.train.negative_mode = match file.negative_mode.as_deref() {
        Some("prefer-observed-zeros") => NegativeMode::PreferObservedZeros,
        Some("unobserved") | None => NegativeMode::Unobserved,
        Some(other) => bail!(dyncal_core::Error::InvalidConfig(format!(
            "unknown negative_mode `{other}`"
        ))),
    };
    config.reference_mode = match args.reference_mode {
        Some(ReferenceModeArg::SampleProfile) => ReferenceMode::SampleProfile,
        Some(ReferenceModeArg::RecentWindow) => ReferenceMode::RecentWindow,
        None => match file.reference_mode.as_deref() {
            Some("sample-profile") | None => ReferenceMode::SampleProfile,
            Some("recent-window") => ReferenceMode::RecentWindow,
            Some(other) => bail!(dyncal_core::Error::InvalidConfig(format!(
                "unknown reference_mode `{other}`"
            ))),
        },
    };
    if let Some(v) = args.knn_k.or(file.knn_k) {
        config.knn_neighbors = v;
    }
    if let Some(v) = args.jobs.or(file.jobs) {
        config.jobs = v;
    }
    Ok(config)
}

pub fn run(args: RunArgs) -> Result<()> {
    let config = build_config(&args)?;
    config.validate()?;
    let mut manifest = ManifestBuilder::new("run", serde_json::to_value(&config)?);
    for file in ["interactions.csv", "categories.csv"] {
        manifest
            .input(&args.data.join(file))
            .with_context(|| format!("canonical dataset in `{}` (--data)", args.data.display()))?;
    }

    manifest.stage("load");
    let dataset: Dataset<Scalar> = ingest::load_canonical(&args.data)?;
    std::fs::create_dir_all(&args.out_dir)?;

    manifest.stage("experiment");
    let result = match run_experiment(&dataset, &config) {
        Ok(result) => result,
        Err(failure) => {
            let partial = args.out_dir.join("partial_manifest.json");
            write_partial_manifest(&partial, &failure)?;
            eprintln!(
                "partial results manifest written to {}",
                partial.display()
            );
            bail!(failure.error);
        }
    };

    manifest.stage("write");
    let results_path = args.out_dir.join("results.csv");
    write_results_csv(
        std::fs::File::create(&results_path)?,
        &dataset,
        &result.cells,
        &result.assignments,
    )?;
    let summary_path = args.out_dir.join("summary.json");
    write_summary_json(std::fs::File::create(&summary_path)?, &config, &result)?;
    let segments_path = args.out_dir.join("segments.csv");
    write_assignments(&segments_path, &dataset, &result.assignments)?;

    match result.argmin_miscalibration_level {
        Some(level) => println!("argmin miscalibration level: {level} of {}", result.n_levels),
        None => println!("no level produced evaluable users"),
    }
    for level in &result.levels {
        if let Some(mc) = &level.miscalibration {
            println!(
                "level {:>3}: mean miscalibration {:.4}, mean ndcg {:.4} ({} users)",
                level.level,
                mc.mean,
                level.ndcg.as_ref().map(|s| s.mean).unwrap_or(f64::NAN),
                level.eligible_users
            );
        }
    }

    manifest.output(&results_path)?;
    manifest.output(&summary_path)?;
    manifest.output(&segments_path)?;
    manifest.write(&args.out_dir)?;
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub users: usize,
    #[arg(long, default_value_t = 500)]
    pub items: usize,
    #[arg(long, default_value_t = 10)]
    pub categories: usize,
    #[arg(long, default_value_t = 8)]
    pub windows: usize,
    /// Shift window index; windows newer than this draw from the
    /// post-shift preference.
    #[arg(long, default_value_t = 4)]
    pub shift_at: usize,
    #[arg(long, default_value_t = 40)]
    pub per_cell: usize,
    #[arg(long, default_value_t = 0.3)]
    pub pre_conc: f64,
    #[arg(long, default_value_t = 0.3)]
    pub post_conc: f64,
    /// Give pre- and post-shift preferences disjoint category supports.
    #[arg(long)]
    pub orthogonal: bool,
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let spec = DriftSpec {
        n_users: args.users,
        n_items: args.items,
        n_categories: args.categories,
        windows: args.windows,
        shift_at: args.shift_at,
        pre_concentration: args.pre_conc,
        post_concentration: args.post_conc,
        orthogonal_supports: args.orthogonal,
        interactions_per_user_per_window: args.per_cell,
        seed: args.seed,
    };
    let mut manifest = ManifestBuilder::new("synth", serde_json::to_value(&spec)?);
    manifest.stage("generate");
    let (dataset, truth) = generate_drift_dataset::<Scalar>(&spec)?;

    manifest.stage("write");
    std::fs::create_dir_all(&args.out_dir)?;
    ingest::save_canonical(&dataset, &args.out_dir)?;
    let truth_path = args.out_dir.join("truth.json");
    serde_json::to_writer_pretty(std::fs::File::create(&truth_path)?, &truth)?;
    println!(
        "generated {} interactions for {} users over {} windows (shift at window {})",
        dataset.interactions.len(),
        spec.n_users,
        spec.windows,
        spec.shift_at
    );
    for file in ["interactions.csv", "categories.csv", "users.csv", "items.csv"] {
        manifest.output(&args.out_dir.join(file))?;
    }
    manifest.output(&truth_path)?;
    manifest.write(&args.out_dir)?;
    Ok(())
}

#[derive(Args)]
pub struct ReportArgs {
    /// Results CSV produced by `run`.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

pub fn report(args: ReportArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new(
        "report",
        serde_json::json!({ "results": args.results }),
    );
    manifest
        .input(&args.results)
        .with_context(|| format!("results file `{}` (--results)", args.results.display()))?;
    manifest.stage("report");
    let rows = read_results_csv(std::fs::File::open(&args.results)?)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let global_path = args.out_dir.join("report_global.csv");
    write_global_report(std::fs::File::create(&global_path)?, &rows)?;
    let segments_path = args.out_dir.join("report_segments.csv");
    write_segment_report(std::fs::File::create(&segments_path)?, &rows)?;
    println!(
        "wrote {} and {}",
        global_path.display(),
        segments_path.display()
    );
    manifest.output(&global_path)?;
    manifest.output(&segments_path)?;
    manifest.write(&args.out_dir)?;
    Ok(())
}

#[derive(Args)]
pub struct WindowsArgs {
    /// Canonical dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated candidate widths, e.g. 1d,7d,14d.
    #[arg(long, value_delimiter = ',', required = true)]
    pub widths: Vec<String>,
    /// Window anchor (defaults to the newest interaction).
    #[arg(long)]
    pub anchor: Option<String>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

pub fn windows(args: WindowsArgs) -> Result<()> {
    let dataset: Dataset<Scalar> = ingest::load_canonical(&args.data)?;
    let widths: Vec<i64> = args
        .widths
        .iter()
        .map(|w| parse_width(w))
        .collect::<dyncal_core::Result<_>>()?;
    let anchor = match &args.anchor {
        Some(a) => Some(parse_timestamp(a)?),
        None => None,
    };
    let rows = window_grid(&dataset, &widths, anchor)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let path = args.out_dir.join("window_grid.csv");
    write_window_grid_csv(std::fs::File::create(&path)?, &rows)?;
    for row in &rows {
        println!(
            "width {:>10}s: {:>4} windows, {:>5.1}% empty cells, median cell size {}",
            row.width_secs,
            row.n_windows,
            row.empty_cell_fraction * 100.0,
            row.median_cell_size
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}
