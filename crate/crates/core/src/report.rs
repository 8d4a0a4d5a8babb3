//! Result serialization: the per-user results CSV, the summary JSON, the
//! window-grid table, the partial-failure manifest, and the tidy plot-data
//! CSVs consumed by external plotting tools.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{CellResult, ExperimentConfig, ExperimentResult, SummaryStats};
use crate::model::Dataset;
use crate::scalar::Real;
use crate::segment::{Segment, UserSegmentAssignment};
use crate::window::WindowGridRow;

/// Per-user results rows: `level,repetition,user,miscalibration,ndcg,
/// activity_segment,entropy_segment`, ordered by (level, repetition, user).
pub fn write_results_csv<F: Real, W: Write>(
    out: W,
    dataset: &Dataset<F>,
    cells: &[CellResult<F>],
    assignments: &[UserSegmentAssignment<F>],
) -> Result<()> {
    let by_user: BTreeMap<u32, (Segment, Segment)> = assignments
        .iter()
        .map(|a| (a.user.0, (a.activity_segment, a.entropy_segment)))
        .collect();
    let mut cells: Vec<&CellResult<F>> = cells.iter().collect();
    cells.sort_by_key(|c| (c.level, c.repetition));

    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "level",
        "repetition",
        "user",
        "miscalibration",
        "ndcg",
        "activity_segment",
        "entropy_segment",
    ])?;
    for cell in cells {
        for (&user, &mc) in &cell.per_user_miscalibration {
            let ndcg = cell.per_user_ndcg[&user];
            let (activity, entropy) = by_user
                .get(&user)
                .copied()
                .unwrap_or((Segment::Low, Segment::Low));
            w.write_record([
                cell.level.to_string(),
                cell.repetition.to_string(),
                dataset.user_keys[user as usize].clone(),
                mc.to_string(),
                ndcg.to_string(),
                activity.to_string(),
                entropy.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Everything the summary JSON carries.
#[derive(Serialize)]
struct Summary<'a, F: Real> {
    tool_version: &'static str,
    config: &'a ExperimentConfig<F>,
    seeds: &'a [u64],
    #[serde(flatten)]
    result: &'a ExperimentResult<F>,
}

pub fn write_summary_json<F: Real, W: Write>(
    out: W,
    config: &ExperimentConfig<F>,
    result: &ExperimentResult<F>,
) -> Result<()> {
    let summary = Summary {
        tool_version: env!("CARGO_PKG_VERSION"),
        config,
        seeds: &config.seeds,
        result,
    };
    serde_json::to_writer_pretty(out, &summary)?;
    Ok(())
}

/// Window-width tuning table as CSV.
pub fn write_window_grid_csv<W: Write>(out: W, rows: &[WindowGridRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["width_secs", "n_windows", "empty_cell_fraction", "median_cell_size"])?;
    for r in rows {
        w.write_record([
            r.width_secs.to_string(),
            r.n_windows.to_string(),
            r.empty_cell_fraction.to_string(),
            r.median_cell_size.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Manifest of completed cells written when a run aborts partway.
#[derive(Serialize)]
pub struct PartialManifest {
    pub error: String,
    pub failed_level: Option<usize>,
    pub failed_repetition: Option<usize>,
    pub completed_cells: Vec<(usize, usize)>,
}

pub fn write_partial_manifest<F: Real>(
    path: &Path,
    failure: &crate::experiment::ExperimentFailure<F>,
) -> Result<()> {
    let manifest = PartialManifest {
        error: failure.error.to_string(),
        failed_level: failure.level,
        failed_repetition: failure.repetition,
        completed_cells: failure.completed.iter().map(|c| (c.level, c.repetition)).collect(),
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, &manifest)?;
    Ok(())
}

/// One parsed row of a results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsRow {
    pub level: usize,
    pub repetition: usize,
    pub user: String,
    pub miscalibration: f64,
    pub ndcg: f64,
    pub activity_segment: String,
    pub entropy_segment: String,
}

pub fn read_results_csv(reader: impl Read) -> Result<Vec<ResultsRow>> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let (level, rep, user, mc, ndcg, act, ent) = (
        col("level")?,
        col("repetition")?,
        col("user")?,
        col("miscalibration")?,
        col("ndcg")?,
        col("activity_segment")?,
        col("entropy_segment")?,
    );
    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record?;
        let parse_err = || Error::Other("malformed results row".into());
        rows.push(ResultsRow {
            level: record.get(level).and_then(|v| v.parse().ok()).ok_or_else(parse_err)?,
            repetition: record.get(rep).and_then(|v| v.parse().ok()).ok_or_else(parse_err)?,
            user: record.get(user).ok_or_else(parse_err)?.to_string(),
            miscalibration: record.get(mc).and_then(|v| v.parse().ok()).ok_or_else(parse_err)?,
            ndcg: record.get(ndcg).and_then(|v| v.parse().ok()).ok_or_else(parse_err)?,
            activity_segment: record.get(act).ok_or_else(parse_err)?.to_string(),
            entropy_segment: record.get(ent).ok_or_else(parse_err)?.to_string(),
        });
    }
    Ok(rows)
}

fn stat_records<F: Real>(stats: &SummaryStats<F>, metric: &str) -> Vec<(String, String)> {
    vec![
        (format!("{metric}_mean"), stats.mean.to_string()),
        (format!("{metric}_median"), stats.median.to_string()),
        (format!("{metric}_q1"), stats.q1.to_string()),
        (format!("{metric}_q3"), stats.q3.to_string()),
        (format!("{metric}_min"), stats.min.to_string()),
        (format!("{metric}_max"), stats.max.to_string()),
        (format!("{metric}_n"), stats.n.to_string()),
    ]
}

/// Tidy per-level plot data recomputed from results rows:
/// `level,statistic,value`.
pub fn write_global_report<W: Write>(out: W, rows: &[ResultsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "statistic", "value"])?;
    let levels: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.level).collect();
    for level in levels {
        let mc: Vec<f64> = rows
            .iter()
            .filter(|r| r.level == level)
            .map(|r| r.miscalibration)
            .collect();
        let ndcg: Vec<f64> = rows
            .iter()
            .filter(|r| r.level == level)
            .map(|r| r.ndcg)
            .collect();
        for (metric, values) in [("miscalibration", mc), ("ndcg", ndcg)] {
            if let Some(stats) = SummaryStats::from_values(&values) {
                for (statistic, value) in stat_records(&stats, metric) {
                    w.write_record([level.to_string(), statistic, value])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Tidy per-segment plot data: `level,segment,statistic,value`, with
/// segments keyed `activity:low`, `entropy:high`, etc.
pub fn write_segment_report<W: Write>(out: W, rows: &[ResultsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "segment", "statistic", "value"])?;
    let levels: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.level).collect();
    for level in levels {
        for (factor, of_row) in [
            ("activity", (|r: &ResultsRow| r.activity_segment.clone()) as fn(&ResultsRow) -> String),
            ("entropy", |r: &ResultsRow| r.entropy_segment.clone()),
        ] {
            for segment in ["low", "mid", "high"] {
                let in_cell = |r: &&ResultsRow| r.level == level && of_row(r) == segment;
                let mc: Vec<f64> = rows.iter().filter(in_cell).map(|r| r.miscalibration).collect();
                let ndcg: Vec<f64> = rows.iter().filter(in_cell).map(|r| r.ndcg).collect();
                let key = format!("{factor}:{segment}");
                for (metric, values) in [("miscalibration", mc), ("ndcg", ndcg)] {
                    if let Some(stats) = SummaryStats::from_values(&values) {
                        for (statistic, value) in stat_records(&stats, metric) {
                            w.write_record([level.to_string(), key.clone(), statistic, value])?;
                        }
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
