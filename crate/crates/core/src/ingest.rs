//! Parsing of raw interaction logs and category files, domain-specific
//! activity filters, and canonicalization into a dense [`Dataset`].
//!
//! Input formats:
//! - interaction log: CSV with a header; required columns `user_id`,
//!   `item_id`, `timestamp` (epoch seconds or ISO-8601); optional `label`
//!   (0/1) and `signal` (non-negative real). Column names are remappable.
//! - category file: CSV with header `item_id,categories`, categories
//!   pipe-delimited. Shares are split equally across an item's categories.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CategoryCatalog, CategoryId, Dataset, Interaction, ItemId, UserId};
use crate::scalar::Real;
use crate::timeutil::{parse_timestamp, year_of};

/// Column names for the interaction log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub user: String,
    pub item: String,
    pub timestamp: String,
    pub label: Option<String>,
    pub signal: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            user: "user_id".into(),
            item: "item_id".into(),
            timestamp: "timestamp".into(),
            label: Some("label".into()),
            signal: Some("signal".into()),
        }
    }
}

/// One parsed interaction row, still keyed by external identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInteraction {
    pub user_key: String,
    pub item_key: String,
    pub timestamp: i64,
    /// Absent means "positive unless a later labeling step decides".
    pub label: Option<bool>,
    pub signal: Option<f64>,
}

/// A row the parser refused, with the 1-based data row number.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reject {
    pub row: usize,
    pub reason: String,
}

/// How the annual-activity bound is applied across the year range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnualRule {
    /// The count must be within bounds in every year of the range.
    EveryYear,
    /// The mean annual count over the range must be within bounds.
    Average,
}

/// Preprocessing filter parameters. Any `None` disables that stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Positive-label cutoff on the raw signal.
    pub signal_threshold: Option<f64>,
    /// Inclusive per-year activity bounds (users).
    pub annual_min: Option<u64>,
    pub annual_max: Option<u64>,
    /// Inclusive calendar-year range; interactions outside it are dropped
    /// before the activity stage runs.
    pub year_range: Option<(i64, i64)>,
    /// Items with fewer interactions than this are dropped.
    pub item_min_interactions: Option<u64>,
    /// Users must have strictly more than this many interactions per year.
    pub per_year_min: Option<u64>,
    pub annual_rule: AnnualRule,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            signal_threshold: None,
            annual_min: None,
            annual_max: None,
            year_range: None,
            item_min_interactions: None,
            per_year_min: None,
            annual_rule: AnnualRule::EveryYear,
        }
    }
}

impl FilterSpec {
    /// Short-video profile: threshold labeling at the signal mean, no
    /// activity filtering.
    pub fn kuairec() -> Self {
        Self {
            signal_threshold: Some(0.9),
            ..Self::default()
        }
    }

    /// Book profile: 20-50 interactions in every year 2010-2017, items
    /// with at least 1000 interactions, then strictly more than 4
    /// interactions per year.
    pub fn goodreads() -> Self {
        Self {
            annual_min: Some(20),
            annual_max: Some(50),
            year_range: Some((2010, 2017)),
            item_min_interactions: Some(1000),
            per_year_min: Some(4),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let (Some(lo), Some(hi)) = (self.annual_min, self.annual_max) {
            if lo > hi {
                return Err(Error::InvalidConfig(format!(
                    "annual_min {lo} exceeds annual_max {hi}"
                )));
            }
        }
        if let Some((start, end)) = self.year_range {
            if start > end {
                return Err(Error::InvalidConfig(format!(
                    "year range start {start} after end {end}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-stage survivor counts from [`filter_interactions`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct FilterReport {
    pub input_interactions: usize,
    pub after_year_restriction: usize,
    pub users_dropped_activity: usize,
    pub items_dropped_minimum: usize,
    pub users_dropped_per_year: usize,
    pub output_interactions: usize,
    /// Set when some stage emptied the data entirely.
    pub emptied_at_stage: Option<String>,
}

/// Parse an interaction log. Malformed rows land in the rejects report
/// instead of being dropped silently.
pub fn parse_interactions(
    path: &Path,
    columns: &ColumnMap,
) -> Result<(Vec<RawInteraction>, Vec<Reject>)> {
    let file = std::fs::File::open(path)?;
    parse_interactions_from(file, columns)
}

/// Same as [`parse_interactions`], from any reader.
pub fn parse_interactions_from(
    reader: impl Read,
    columns: &ColumnMap,
) -> Result<(Vec<RawInteraction>, Vec<Reject>)> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let user_col = col(&columns.user).ok_or_else(|| Error::MissingColumn(columns.user.clone()))?;
    let item_col = col(&columns.item).ok_or_else(|| Error::MissingColumn(columns.item.clone()))?;
    let ts_col = col(&columns.timestamp)
        .ok_or_else(|| Error::MissingColumn(columns.timestamp.clone()))?;
    let label_col = columns.label.as_deref().and_then(col);
    let signal_col = columns.signal.as_deref().and_then(col);

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for (idx, row) in csv.records().enumerate() {
        let row_no = idx + 1;
        let reject = |reason: String, rejects: &mut Vec<Reject>| {
            rejects.push(Reject { row: row_no, reason });
        };
        let record = match row {
            Ok(r) => r,
            Err(e) => {
                reject(format!("unreadable row: {e}"), &mut rejects);
                continue;
            }
        };
        let field = |i: usize| record.get(i).map(str::trim);
        let (user, item, ts_raw) = match (field(user_col), field(item_col), field(ts_col)) {
            (Some(u), Some(i), Some(t)) if !u.is_empty() && !i.is_empty() => (u, i, t),
            _ => {
                reject("missing user, item, or timestamp field".into(), &mut rejects);
                continue;
            }
        };
        let timestamp = match parse_timestamp(ts_raw) {
            Ok(t) => t,
            Err(_) => {
                reject(format!("unparseable timestamp `{ts_raw}`"), &mut rejects);
                continue;
            }
        };
        let label = match label_col.and_then(&field).filter(|v| !v.is_empty()) {
            Some("1") => Some(true),
            Some("0") => Some(false),
            Some(other) => {
                reject(format!("label `{other}` is not 0 or 1"), &mut rejects);
                continue;
            }
            None => None,
        };
        let signal = match signal_col.and_then(field).filter(|v| !v.is_empty()) {
            Some(raw) => match raw.parse::<f64>() {
                Ok(v) if v >= 0.0 && v.is_finite() => Some(v),
                _ => {
                    reject(format!("signal `{raw}` is not a non-negative number"), &mut rejects);
                    continue;
                }
            },
            None => None,
        };
        records.push(RawInteraction {
            user_key: user.to_string(),
            item_key: item.to_string(),
            timestamp,
            label,
            signal,
        });
    }
    Ok((records, rejects))
}

/// Label every record by thresholding its raw signal: positive iff
/// `signal >= threshold`. Record count and order are preserved.
pub fn label_by_threshold(
    mut records: Vec<RawInteraction>,
    threshold: f64,
) -> Result<Vec<RawInteraction>> {
    for (idx, r) in records.iter_mut().enumerate() {
        let signal = r.signal.ok_or(Error::MissingSignal { row: idx + 1 })?;
        r.label = Some(signal >= threshold);
    }
    Ok(records)
}

fn label_of(r: &RawInteraction) -> bool {
    r.label.unwrap_or(true)
}

/// Apply the activity filters in their fixed stage order:
///
/// 1. restrict to the year range, then keep users whose yearly interaction
///    count satisfies the annual rule;
/// 2. drop items below the minimum interaction count (counted on the
///    stage-1 output);
/// 3. keep users with strictly more than `per_year_min` interactions in
///    every year of the range (on the stage-2 output).
///
/// Disabled stages pass data through unchanged.
pub fn filter_interactions(
    records: Vec<RawInteraction>,
    spec: &FilterSpec,
) -> Result<(Vec<RawInteraction>, FilterReport)> {
    spec.validate()?;
    let mut report = FilterReport {
        input_interactions: records.len(),
        ..FilterReport::default()
    };

    // stage 1a: calendar-year restriction
    let mut current: Vec<RawInteraction> = match spec.year_range {
        Some((start, end)) => records
            .into_iter()
            .filter(|r| {
                let y = year_of(r.timestamp);
                y >= start && y <= end
            })
            .collect(),
        None => records,
    };
    report.after_year_restriction = current.len();

    // stage 1b: annual activity bounds
    if let (Some(lo), Some(hi), Some((start, end))) =
        (spec.annual_min, spec.annual_max, spec.year_range)
    {
        let counts = yearly_counts(&current);
        let n_years = (end - start + 1) as u64;
        let keep: BTreeSet<&String> = counts
            .iter()
            .filter(|(_, per_year)| match spec.annual_rule {
                AnnualRule::EveryYear => (start..=end)
                    .all(|y| per_year.get(&y).is_some_and(|&c| c >= lo && c <= hi)),
                AnnualRule::Average => {
                    let total: u64 = per_year.values().sum();
                    let mean = total as f64 / n_years as f64;
                    mean >= lo as f64 && mean <= hi as f64
                }
            })
            .map(|(user, _)| user)
            .collect();
        let users_before = counts.len();
        report.users_dropped_activity = users_before - keep.len();
        current.retain(|r| keep.contains(&r.user_key));
    }
    if current.is_empty() && report.input_interactions > 0 {
        report.emptied_at_stage = Some("annual-activity".into());
        report.output_interactions = 0;
        return Ok((current, report));
    }

    // stage 2: minimum item popularity
    if let Some(min) = spec.item_min_interactions {
        let mut item_counts: HashMap<&str, u64> = HashMap::new();
        for r in &current {
            *item_counts.entry(r.item_key.as_str()).or_default() += 1;
        }
        let items_before = item_counts.len();
        let keep: BTreeSet<String> = item_counts
            .iter()
            .filter(|(_, &c)| c >= min)
            .map(|(k, _)| k.to_string())
            .collect();
        report.items_dropped_minimum = items_before - keep.len();
        current.retain(|r| keep.contains(&r.item_key));
    }
    if current.is_empty() && report.input_interactions > 0 {
        report.emptied_at_stage = Some("item-minimum".into());
        report.output_interactions = 0;
        return Ok((current, report));
    }

    // stage 3: strict per-year floor
    if let (Some(min), Some((start, end))) = (spec.per_year_min, spec.year_range) {
        let counts = yearly_counts(&current);
        let keep: BTreeSet<&String> = counts
            .iter()
            .filter(|(_, per_year)| {
                (start..=end).all(|y| per_year.get(&y).is_some_and(|&c| c > min))
            })
            .map(|(user, _)| user)
            .collect();
        report.users_dropped_per_year = counts.len() - keep.len();
        current.retain(|r| keep.contains(&r.user_key));
    }
    if current.is_empty() && report.input_interactions > 0 {
        report.emptied_at_stage = Some("per-year-floor".into());
    }
    report.output_interactions = current.len();
    Ok((current, report))
}

fn yearly_counts(records: &[RawInteraction]) -> BTreeMap<String, BTreeMap<i64, u64>> {
    let mut counts: BTreeMap<String, BTreeMap<i64, u64>> = BTreeMap::new();
    for r in records {
        *counts
            .entry(r.user_key.clone())
            .or_default()
            .entry(year_of(r.timestamp))
            .or_default() += 1;
    }
    counts
}

/// Parse a category file into external-key form: item key -> category names.
pub fn parse_categories(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let file = std::fs::File::open(path)?;
    parse_categories_from(file)
}

pub fn parse_categories_from(reader: impl Read) -> Result<BTreeMap<String, Vec<String>>> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    let item_col = headers
        .iter()
        .position(|h| h == "item_id")
        .ok_or_else(|| Error::MissingColumn("item_id".into()))?;
    let cats_col = headers
        .iter()
        .position(|h| h == "categories")
        .ok_or_else(|| Error::MissingColumn("categories".into()))?;
    let mut out = BTreeMap::new();
    for row in csv.records() {
        let row = row?;
        let item = row.get(item_col).unwrap_or("").trim().to_string();
        let cats: Vec<String> = row
            .get(cats_col)
            .unwrap_or("")
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if !item.is_empty() && !cats.is_empty() {
            out.insert(item, cats);
        }
    }
    Ok(out)
}

/// Remap external keys to dense ids (first-appearance order), sort
/// interactions chronologically, and build the normalized equal-share
/// catalog. Every surviving item must have a category entry.
pub fn canonicalize<F: Real>(
    records: Vec<RawInteraction>,
    categories: &BTreeMap<String, Vec<String>>,
) -> Result<Dataset<F>> {
    let mut user_ids: HashMap<String, u32> = HashMap::new();
    let mut item_ids: HashMap<String, u32> = HashMap::new();
    let mut user_keys = Vec::new();
    let mut item_keys = Vec::new();
    let mut interactions = Vec::with_capacity(records.len());

    for r in &records {
        let user = *user_ids.entry(r.user_key.clone()).or_insert_with(|| {
            user_keys.push(r.user_key.clone());
            (user_keys.len() - 1) as u32
        });
        let item = *item_ids.entry(r.item_key.clone()).or_insert_with(|| {
            item_keys.push(r.item_key.clone());
            (item_keys.len() - 1) as u32
        });
        interactions.push(Interaction {
            user: UserId(user),
            item: ItemId(item),
            timestamp: r.timestamp,
            positive: label_of(r),
            raw_signal: r.signal.map(F::from_f64_lossy),
        });
    }
    interactions.sort_by_key(|i| (i.timestamp, i.user, i.item));

    // dense category ids in first-appearance order over sorted item keys
    let mut category_ids: HashMap<&str, u32> = HashMap::new();
    let mut category_names: Vec<String> = Vec::new();
    let mut shares: Vec<Vec<(CategoryId, F)>> = vec![Vec::new(); item_keys.len()];
    for (idx, key) in item_keys.iter().enumerate() {
        let cats = categories
            .get(key)
            .ok_or_else(|| Error::MissingCategory(key.clone()))?;
        let frac = F::one() / F::from_usize(cats.len()).unwrap();
        let mut row: Vec<(CategoryId, F)> = Vec::with_capacity(cats.len());
        for cat in cats {
            let id = *category_ids.entry(cat.as_str()).or_insert_with(|| {
                category_names.push(cat.clone());
                (category_names.len() - 1) as u32
            });
            row.push((CategoryId(id), frac));
        }
        row.sort_by_key(|(c, _)| *c);
        row.dedup_by_key(|(c, _)| *c);
        shares[idx] = row;
    }

    Ok(Dataset {
        interactions,
        catalog: CategoryCatalog {
            category_names,
            shares,
        },
        user_keys,
        item_keys,
    })
}

/// Write the rejects report: `row,reason`.
pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "reason"])?;
    for r in rejects {
        w.write_record([r.row.to_string(), r.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// Persist a canonical dataset as a directory of CSV files
/// (`interactions.csv`, `categories.csv`, `users.csv`, `items.csv`).
pub fn save_canonical<F: Real>(dataset: &Dataset<F>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("interactions.csv"))?;
    w.write_record(["user_id", "item_id", "timestamp", "label", "signal"])?;
    for i in &dataset.interactions {
        w.write_record([
            dataset.user_keys[i.user.index()].as_str(),
            dataset.item_keys[i.item.index()].as_str(),
            &i.timestamp.to_string(),
            if i.positive { "1" } else { "0" },
            &i.raw_signal.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("categories.csv"))?;
    w.write_record(["item_id", "categories"])?;
    for (idx, key) in dataset.item_keys.iter().enumerate() {
        let cats: Vec<&str> = dataset.catalog.shares[idx]
            .iter()
            .map(|(c, _)| dataset.catalog.category_names[c.index()].as_str())
            .collect();
        w.write_record([key.as_str(), &cats.join("|")])?;
    }
    w.flush()?;

    for (file, keys) in [("users.csv", &dataset.user_keys), ("items.csv", &dataset.item_keys)] {
        let mut w = csv::Writer::from_path(dir.join(file))?;
        w.write_record(["dense_id", "key"])?;
        for (id, key) in keys.iter().enumerate() {
            w.write_record([id.to_string().as_str(), key])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Load a dataset previously written by [`save_canonical`].
pub fn load_canonical<F: Real>(dir: &Path) -> Result<Dataset<F>> {
    let (records, rejects) =
        parse_interactions(&dir.join("interactions.csv"), &ColumnMap::default())?;
    if let Some(first) = rejects.first() {
        return Err(Error::Other(format!(
            "canonical interactions file is corrupt at row {}: {}",
            first.row, first.reason
        )));
    }
    let categories = parse_categories(&dir.join("categories.csv"))?;
    canonicalize(records, &categories)
}
