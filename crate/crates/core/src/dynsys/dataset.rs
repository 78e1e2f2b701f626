use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Series, SystemKind};
use crate::{Error, Result};

/// One system's contiguous block inside the concatenated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub system: SystemKind,
    pub start: usize,
    pub end: usize,
}

/// Train/test index ranges for one segment. Indices refer to input samples
/// whose successor (the target) lies in the same segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub system: SystemKind,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// Concatenated one-step-ahead dataset.
///
/// `targets[n] == inputs[n + 1]` for every usable `n`; the final sample of each
/// segment has no successor and carries a NaN target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub segments: Vec<Segment>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn is_usable(&self, n: usize) -> bool {
        self.segments.iter().any(|s| n >= s.start && n + 1 < s.end)
    }

    pub fn segment_of(&self, n: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| (s.start..s.end).contains(&n))
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.splits.iter().flat_map(|s| s.train.clone()).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.splits.iter().flat_map(|s| s.test.clone()).collect()
    }

    pub fn usable_pairs(&self) -> usize {
        self.segments.iter().map(|s| s.end - s.start - 1).sum()
    }

    pub fn systems(&self) -> Vec<SystemKind> {
        self.segments.iter().map(|s| s.system).collect()
    }
}

/// Concatenates `series` in canonical system order and splits each segment
/// into a leading train block and a trailing test block of
/// `ceil(test_fraction * pairs)` pairs.
pub fn build_dataset(series: &[Series], test_fraction: f64) -> Result<Dataset> {
    if series.is_empty() {
        return Err(Error::config("no series supplied"));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::config("test_fraction must lie in [0, 1)"));
    }
    let len = series[0].len();
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::config("all series must have the same length"));
    }
    if len < 2 {
        return Err(Error::config("series must have at least two samples"));
    }
    let mut ordered: Vec<&Series> = series.iter().collect();
    ordered.sort_by_key(|s| s.system.kind);
    if ordered.windows(2).any(|w| w[0].system.kind == w[1].system.kind) {
        return Err(Error::config("duplicate system in dataset"));
    }

    let total = len * ordered.len();
    let mut inputs = Vec::with_capacity(total);
    let mut targets = Vec::with_capacity(total);
    let mut segments = Vec::with_capacity(ordered.len());
    let mut splits = Vec::with_capacity(ordered.len());
    for s in ordered {
        let start = inputs.len();
        inputs.extend_from_slice(&s.values);
        targets.extend(s.values.iter().skip(1).copied());
        targets.push(f64::NAN);
        let end = inputs.len();
        let pairs = end - start - 1;
        let n_test = ((test_fraction * pairs as f64).ceil() as usize).min(pairs);
        let boundary = start + pairs - n_test;
        segments.push(Segment {
            system: s.system.kind,
            start,
            end,
        });
        splits.push(Split {
            system: s.system.kind,
            train: start..boundary,
            test: boundary..start + pairs,
        });
    }
    Ok(Dataset {
        inputs,
        targets,
        segments,
        splits,
    })
}
