//! Event segmentation: a boundary provider proposes cut indices, and the
//! induced contiguous ranges become events.

use super::ShotSummary;
use crate::manifest::{ShotId, SourceManifest};
use crate::vector::cosine;

/// Proposes event cut indices. A cut `i` starts a new event at shot `i`.
pub trait EventBoundaryProvider: Send + Sync {
    fn cuts(&self, manifest: &SourceManifest, summaries: &[ShotSummary]) -> Result<Vec<usize>, String>;
}

/// Cuts wherever consecutive keyframe embeddings fall below a cosine threshold.
#[derive(Debug, Clone, Copy)]
pub struct KeyframeBoundary {
    pub threshold: f64,
}

impl Default for KeyframeBoundary {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

impl EventBoundaryProvider for KeyframeBoundary {
    fn cuts(&self, manifest: &SourceManifest, _: &[ShotSummary]) -> Result<Vec<usize>, String> {
        Ok(manifest
            .shots
            .windows(2)
            .enumerate()
            .filter(|(_, w)| cosine(&w[0].keyframe_embedding, &w[1].keyframe_embedding) < self.threshold)
            .map(|(i, _)| i + 1)
            .collect())
    }
}

/// Fixed cut list, for tests and externally computed segmentations.
#[derive(Debug, Clone, Default)]
pub struct FixedBoundary(pub Vec<usize>);

impl EventBoundaryProvider for FixedBoundary {
    fn cuts(&self, _: &SourceManifest, _: &[ShotSummary]) -> Result<Vec<usize>, String> {
        Ok(self.0.clone())
    }
}

/// Turns cut indices over `n` shots into inclusive `(first, last)` ranges.
pub fn ranges_from_cuts(n: usize, cuts: &[usize]) -> Result<Vec<(ShotId, ShotId)>, String> {
    if n == 0 {
        return Err("no shots to segment".into());
    }
    let mut sorted = cuts.to_vec();
    sorted.sort_unstable();
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return Err(format!("duplicate cut {}", w[0]));
        }
    }
    if let Some(&bad) = sorted.iter().find(|&&c| c == 0 || c >= n) {
        return Err(format!("cut {bad} outside 1..{n}"));
    }
    let mut ranges = Vec::with_capacity(sorted.len() + 1);
    let mut start = 0usize;
    for c in sorted.into_iter().chain(std::iter::once(n)) {
        ranges.push((start as ShotId, (c - 1) as ShotId));
        start = c;
    }
    Ok(ranges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cut_splits_in_two() {
        assert_eq!(ranges_from_cuts(6, &[3]).unwrap(), vec![(0, 2), (3, 5)]);
    }

    #[test]
    fn no_cuts_is_one_event() {
        assert_eq!(ranges_from_cuts(6, &[]).unwrap(), vec![(0, 5)]);
    }

    #[test]
    fn invalid_cuts_rejected() {
        assert!(ranges_from_cuts(6, &[3, 3]).is_err());
        assert!(ranges_from_cuts(6, &[0]).is_err());
        assert!(ranges_from_cuts(6, &[6]).is_err());
    }

    #[test]
    fn unsorted_cuts_accepted() {
        assert_eq!(ranges_from_cuts(5, &[4, 2]).unwrap(), vec![(0, 1), (2, 3), (4, 4)]);
    }
}
