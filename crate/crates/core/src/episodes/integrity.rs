use serde::{Deserialize, Serialize};

use super::format::{Episode, EpisodeError};
use crate::projection::Verdict;

pub const DEFAULT_GAP_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    /// Index of the frame after the gap.
    pub frame: usize,
    pub gap_ns: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub frames: usize,
    pub median_period_ns: f64,
    pub gap_factor: f64,
    pub gaps: Vec<Gap>,
    pub non_monotonic: usize,
    pub verdict: Verdict,
}

/// Flags gaps longer than `gap_factor` median periods and any timestamp that
/// does not increase.
pub fn integrity_check(episode: &Episode, gap_factor: f64) -> Result<IntegrityReport, EpisodeError> {
    let n = episode.frames.len();
    if n < 2 {
        return Err(EpisodeError::TooFewFrames(n));
    }
    let diffs: Vec<i64> = episode
        .frames
        .windows(2)
        .map(|w| w[1].timestamp_ns - w[0].timestamp_ns)
        .collect();
    let mut sorted = diffs.clone();
    sorted.sort_unstable();
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2] as f64
    } else {
        (sorted[m / 2 - 1] as f64 + sorted[m / 2] as f64) / 2.0
    };
    let limit = gap_factor * median;
    let gaps: Vec<Gap> = diffs
        .iter()
        .enumerate()
        .filter(|(_, &d)| d as f64 > limit)
        .map(|(i, &d)| Gap { frame: i + 1, gap_ns: d })
        .collect();
    let non_monotonic = diffs.iter().filter(|&&d| d <= 0).count();
    let verdict = if gaps.is_empty() && non_monotonic == 0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(IntegrityReport {
        frames: n,
        median_period_ns: median,
        gap_factor,
        gaps,
        non_monotonic,
        verdict,
    })
}

/// Drops frames inside runs of more than `min_run` consecutive static frames.
///
/// A frame is static when no joint moved more than `threshold` since the
/// previous frame. The frame that starts a static run is kept, as is every
/// index in `keep`.
pub fn prune_static_frames(episode: &Episode, threshold: f64, min_run: usize, keep: &[usize]) -> Episode {
    let frames = &episode.frames;
    let is_static: Vec<bool> = (0..frames.len())
        .map(|i| {
            i > 0
                && frames[i]
                    .q
                    .iter()
                    .zip(&frames[i - 1].q)
                    .all(|(a, b)| (a - b).abs() < threshold)
        })
        .collect();
    let mut drop = vec![false; frames.len()];
    let mut i = 0;
    while i < frames.len() {
        if !is_static[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < frames.len() && is_static[i] {
            i += 1;
        }
        if i - start > min_run {
            for d in &mut drop[start..i] {
                *d = true;
            }
        }
    }
    for &k in keep {
        if let Some(d) = drop.get_mut(k) {
            *d = false;
        }
    }
    Episode {
        header: episode.header.clone(),
        frames: frames
            .iter()
            .zip(&drop)
            .filter(|(_, d)| !**d)
            .map(|(f, _)| f.clone())
            .collect(),
    }
}
