//! Percentile-based user segmentation into activity and profile-entropy
//! tertiles. Cuts are nearest-rank at 1/3 and 2/3 of the sorted values
//! over the full dataset, so a user's segment never changes across window
//! levels; ties at a cut fall into the lower segment.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{profile_distribution, profile_entropy};
use crate::model::{Dataset, UserId};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Low,
    Mid,
    High,
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Segment::Low => "low",
            Segment::Mid => "mid",
            Segment::High => "high",
        })
    }
}

/// Which user factor a segmentation keys on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentFactor {
    Activity,
    Entropy,
}

impl fmt::Display for SegmentFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SegmentFactor::Activity => "activity",
            SegmentFactor::Entropy => "entropy",
        })
    }
}

/// Combined per-user assignment, exported alongside results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserSegmentAssignment<F> {
    pub user: UserId,
    pub activity_segment: Segment,
    pub entropy_segment: Segment,
    /// Positive interaction events.
    pub activity_value: u64,
    /// Profile entropy in nats.
    pub entropy_value: F,
}

/// Nearest-rank cut: the value at 1-based rank ceil(n * k / 3).
fn tertile_cuts<T: Copy + PartialOrd>(values: &[T]) -> (T, T) {
    let mut sorted: Vec<T> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("segment values must be ordered"));
    let n = sorted.len();
    let rank = |k: usize| (n * k).div_ceil(3).max(1) - 1;
    (sorted[rank(1)], sorted[rank(2)])
}

fn assign<T: Copy + PartialOrd>(value: T, cuts: (T, T)) -> Segment {
    if value <= cuts.0 {
        Segment::Low
    } else if value <= cuts.1 {
        Segment::Mid
    } else {
        Segment::High
    }
}

/// Positive interaction events per user.
pub fn activity_counts<F: Real>(dataset: &Dataset<F>) -> Vec<u64> {
    let mut counts = vec![0u64; dataset.n_users()];
    for i in dataset.interactions.iter().filter(|i| i.positive) {
        counts[i.user.index()] += 1;
    }
    counts
}

/// Tertile assignment by positive interaction count over the full dataset.
pub fn segment_by_activity<F: Real>(dataset: &Dataset<F>) -> Result<Vec<(UserId, u64, Segment)>> {
    if dataset.n_users() < 3 {
        return Err(Error::TooFewUsers(dataset.n_users()));
    }
    let counts = activity_counts(dataset);
    let cuts = tertile_cuts(&counts);
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(u, c)| (UserId(u as u32), c, assign(c, cuts)))
        .collect())
}

/// Tertile assignment by full-profile category entropy. Every user must
/// have at least one positive interaction.
pub fn segment_by_entropy<F: Real>(dataset: &Dataset<F>) -> Result<Vec<(UserId, F, Segment)>> {
    if dataset.n_users() < 3 {
        return Err(Error::TooFewUsers(dataset.n_users()));
    }
    let profiles = dataset.positive_profiles();
    let mut entropies = Vec::with_capacity(profiles.len());
    for (u, items) in profiles.iter().enumerate() {
        let dist = profile_distribution(items, &dataset.catalog)
            .ok_or_else(|| Error::EmptyProfile(dataset.user_keys[u].clone()))?;
        entropies.push(profile_entropy(&dist));
    }
    let cuts = tertile_cuts(&entropies);
    Ok(entropies
        .into_iter()
        .enumerate()
        .map(|(u, h)| (UserId(u as u32), h, assign(h, cuts)))
        .collect())
}

/// Both segmentations combined per user.
pub fn segment_users<F: Real>(dataset: &Dataset<F>) -> Result<Vec<UserSegmentAssignment<F>>> {
    let activity = segment_by_activity(dataset)?;
    let entropy = segment_by_entropy(dataset)?;
    Ok(activity
        .into_iter()
        .zip(entropy)
        .map(|((user, count, a_seg), (_, h, e_seg))| UserSegmentAssignment {
            user,
            activity_segment: a_seg,
            entropy_segment: e_seg,
            activity_value: count,
            entropy_value: h,
        })
        .collect())
}

/// CSV export: `user_id,activity_segment,entropy_segment,activity_value,entropy_value`.
pub fn write_assignments<F: Real>(
    path: &Path,
    dataset: &Dataset<F>,
    assignments: &[UserSegmentAssignment<F>],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "user_id",
        "activity_segment",
        "entropy_segment",
        "activity_value",
        "entropy_value",
    ])?;
    for a in assignments {
        w.write_record([
            dataset.user_keys[a.user.index()].as_str(),
            &a.activity_segment.to_string(),
            &a.entropy_segment.to_string(),
            &a.activity_value.to_string(),
            &a.entropy_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
