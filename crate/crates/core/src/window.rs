//! Temporal windowing: slice each profile into fixed-width windows counted
//! backwards from the anchor, and build the cumulative samples D^1..D^n.
//!
//! Window j covers the half-open interval (anchor - j*width, anchor -
//! (j-1)*width], so an interaction exactly at the anchor lands in window 1
//! and every interaction lands in exactly one window. Window 1 is the most
//! recent; D^l is the union of windows 1..=l across all users.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::scalar::Real;
use crate::timeutil::minus_months;

/// Window width: a fixed duration, or whole calendar months (UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowWidth {
    Seconds(i64),
    CalendarMonths(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub width: WindowWidth,
    /// Window boundaries are counted backwards from here; `None` derives
    /// the anchor from the dataset's maximum timestamp.
    pub anchor: Option<i64>,
    /// Caps the number of windows; interactions older than the capped span
    /// are left out of every sample (their count is reported).
    pub max_windows: Option<usize>,
}

impl WindowSpec {
    pub fn fixed(width_secs: i64) -> Self {
        Self {
            width: WindowWidth::Seconds(width_secs),
            anchor: None,
            max_windows: None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.width {
            WindowWidth::Seconds(s) if s <= 0 => Err(Error::InvalidWindowWidth),
            WindowWidth::CalendarMonths(0) => Err(Error::InvalidWindowWidth),
            _ => Ok(()),
        }
    }
}

/// Per-user subprofiles: `per_user[u][j]` holds the indices (into
/// `dataset.interactions`, chronologically ascending) of user u's
/// interactions in window j+1.
#[derive(Debug, Clone)]
pub struct SubprofileSplit {
    pub n_windows: usize,
    pub anchor: i64,
    pub per_user: Vec<Vec<Vec<usize>>>,
    /// Interactions older than the capped window span.
    pub truncated: usize,
}

impl SubprofileSplit {
    /// Distinct window count a user actually occupies.
    pub fn user_total(&self, user: usize) -> usize {
        self.per_user[user].iter().map(Vec::len).sum()
    }
}

/// The cumulative sample D^l: for every user, the indices of their
/// interactions in windows 1..=l, chronologically ascending.
#[derive(Debug, Clone)]
pub struct TemporalSample {
    pub level: usize,
    pub per_user: Vec<Vec<usize>>,
}

impl TemporalSample {
    pub fn total_interactions(&self) -> usize {
        self.per_user.iter().map(Vec::len).sum()
    }
}

// Window j is (anchor - j*width, anchor - (j-1)*width]: delta in
// [(j-1)*width, j*width) maps to j, so the anchor itself is window 1 and
// an interaction exactly at anchor - width opens window 2.
fn window_of_fixed(anchor: i64, width: i64, ts: i64) -> usize {
    let delta = anchor - ts;
    debug_assert!(delta >= 0);
    (delta.div_euclid(width) + 1) as usize
}

/// Split every user's profile into subprofiles P^1..P^n.
pub fn split_profiles<F: Real>(dataset: &Dataset<F>, spec: &WindowSpec) -> Result<SubprofileSplit> {
    spec.validate()?;
    if dataset.interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let anchor = spec
        .anchor
        .unwrap_or_else(|| dataset.interactions.iter().map(|i| i.timestamp).max().unwrap());
    let min_ts = dataset.interactions.iter().map(|i| i.timestamp).min().unwrap();
    if let Some(newest) = dataset.interactions.iter().map(|i| i.timestamp).max() {
        if newest > anchor {
            return Err(Error::AnchorBeforeData { ts: newest, anchor });
        }
    }

    // assignment function and full window count
    let (n_full, assign): (usize, Box<dyn Fn(i64) -> usize>) = match spec.width {
        WindowWidth::Seconds(width) => (
            window_of_fixed(anchor, width, min_ts),
            Box::new(move |ts| window_of_fixed(anchor, width, ts)),
        ),
        WindowWidth::CalendarMonths(months) => {
            // boundaries[j] = anchor minus j*months, descending
            let mut boundaries = vec![anchor];
            let mut j = 1i64;
            while *boundaries.last().unwrap() >= min_ts {
                boundaries.push(minus_months(anchor, j * months as i64));
                j += 1;
            }
            let n = boundaries.len() - 1;
            let assign = move |ts: i64| {
                if ts >= boundaries[0] {
                    return 1;
                }
                // window j: (boundaries[j], boundaries[j-1]]
                boundaries.partition_point(|&b| b >= ts).max(1)
            };
            (n.max(1), Box::new(assign))
        }
    };
    let n_windows = spec.max_windows.map_or(n_full, |cap| n_full.min(cap.max(1)));

    let mut per_user = vec![vec![Vec::new(); n_windows]; dataset.n_users()];
    let mut truncated = 0usize;
    for (idx, i) in dataset.interactions.iter().enumerate() {
        let j = assign(i.timestamp);
        debug_assert!(j >= 1 && j <= n_full);
        if j > n_windows {
            truncated += 1;
            continue;
        }
        per_user[i.user.index()][j - 1].push(idx);
    }
    // interactions are stored chronologically, so each cell is already
    // ascending; sort defensively for externally-built datasets
    for windows in &mut per_user {
        for cell in windows.iter_mut() {
            cell.sort_unstable();
        }
    }
    Ok(SubprofileSplit {
        n_windows,
        anchor,
        per_user,
        truncated,
    })
}

/// Materialize one cumulative sample D^level.
pub fn build_sample(split: &SubprofileSplit, level: usize) -> Result<TemporalSample> {
    if level == 0 || level > split.n_windows {
        return Err(Error::LevelOutOfRange {
            level,
            available: split.n_windows,
        });
    }
    let per_user = split
        .per_user
        .iter()
        .map(|windows| {
            // oldest window first keeps indices chronologically ascending
            let mut indices: Vec<usize> = Vec::new();
            for j in (0..level).rev() {
                indices.extend_from_slice(&windows[j]);
            }
            indices
        })
        .collect();
    Ok(TemporalSample { level, per_user })
}

/// Materialize all samples D^1..D^n.
pub fn build_samples(split: &SubprofileSplit, n: usize) -> Result<Vec<TemporalSample>> {
    (1..=n).map(|l| build_sample(split, l)).collect()
}

/// One row of the width-tuning table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowGridRow {
    pub width_secs: i64,
    pub n_windows: usize,
    /// Fraction of (active user, window) cells with no interactions.
    pub empty_cell_fraction: f64,
    /// Lower median of cell sizes over active users.
    pub median_cell_size: usize,
}

/// Evidence table for choosing a window width: for each candidate width,
/// the window count, the empty-cell fraction and the median cell size over
/// users that have any interactions at all.
pub fn window_grid<F: Real>(
    dataset: &Dataset<F>,
    widths_secs: &[i64],
    anchor: Option<i64>,
) -> Result<Vec<WindowGridRow>> {
    let mut rows = Vec::with_capacity(widths_secs.len());
    for &width in widths_secs {
        let split = split_profiles(
            dataset,
            &WindowSpec {
                width: WindowWidth::Seconds(width),
                anchor,
                max_windows: None,
            },
        )?;
        let mut sizes: Vec<usize> = Vec::new();
        for windows in &split.per_user {
            if windows.iter().all(Vec::is_empty) {
                continue; // inactive user
            }
            for cell in windows {
                sizes.push(cell.len());
            }
        }
        sizes.sort_unstable();
        let empty = sizes.iter().filter(|&&s| s == 0).count();
        rows.push(WindowGridRow {
            width_secs: width,
            n_windows: split.n_windows,
            empty_cell_fraction: if sizes.is_empty() {
                0.0
            } else {
                empty as f64 / sizes.len() as f64
            },
            median_cell_size: if sizes.is_empty() {
                0
            } else {
                sizes[(sizes.len() - 1) / 2]
            },
        });
    }
    Ok(rows)
}
