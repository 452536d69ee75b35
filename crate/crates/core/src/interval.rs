//! Time intervals, canonical interval sets and temporal IoU.
//!
//! All times are seconds relative to the start of the video. Intervals are
//! closed; a point interval (`start == end`) has measure zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntervalError {
    #[error("interval bounds must be finite (got [{start}, {end}])")]
    NonFinite { start: f64, end: f64 },
    #[error("interval start must be non-negative (got {0})")]
    Negative(f64),
    #[error("interval start {start} is after end {end}")]
    Reversed { start: f64, end: f64 },
}

/// A closed time span `[start, end]` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval")]
pub struct TimeInterval {
    start: f64,
    end: f64,
}

#[derive(Deserialize)]
struct RawInterval {
    start: f64,
    end: f64,
}

impl TryFrom<RawInterval> for TimeInterval {
    type Error = IntervalError;

    fn try_from(raw: RawInterval) -> Result<Self, Self::Error> {
        TimeInterval::new(raw.start, raw.end)
    }
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self, IntervalError> {
        if !start.is_finite() || !end.is_finite() {
            return Err(IntervalError::NonFinite { start, end });
        }
        if start < 0.0 {
            return Err(IntervalError::Negative(start));
        }
        if start > end {
            return Err(IntervalError::Reversed { start, end });
        }
        Ok(Self { start, end })
    }

    /// Panicking constructor for literals in tests and fixtures.
    #[track_caller]
    pub fn of(start: f64, end: f64) -> Self {
        Self::new(start, end).expect("valid interval literal")
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_point(&self) -> bool {
        self.start == self.end
    }

    /// Length of the overlap with `other`, zero when disjoint.
    pub fn overlap(&self, other: &TimeInterval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    pub fn intersects(&self, other: &TimeInterval) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, other: &TimeInterval) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

/// Temporal IoU `|a ∩ b| / |a ∪ b|` of two single intervals.
///
/// Two point intervals score 1 when equal and 0 otherwise.
pub fn interval_iou(a: &TimeInterval, b: &TimeInterval) -> f64 {
    let inter = a.overlap(b);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// A sorted list of pairwise disjoint intervals. Overlapping and touching
/// inputs are merged on construction; the empty set is allowed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<TimeInterval>", into = "Vec<TimeInterval>")]
pub struct IntervalSet {
    intervals: Vec<TimeInterval>,
}

impl From<Vec<TimeInterval>> for IntervalSet {
    fn from(v: Vec<TimeInterval>) -> Self {
        canonicalize(v)
    }
}

impl From<IntervalSet> for Vec<TimeInterval> {
    fn from(s: IntervalSet) -> Self {
        s.intervals
    }
}

impl FromIterator<TimeInterval> for IntervalSet {
    fn from_iter<I: IntoIterator<Item = TimeInterval>>(iter: I) -> Self {
        canonicalize(iter.into_iter().collect())
    }
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(interval: TimeInterval) -> Self {
        Self {
            intervals: vec![interval],
        }
    }

    pub fn intervals(&self) -> &[TimeInterval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    /// Total measure (sum of lengths of the disjoint members).
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(TimeInterval::length).sum()
    }

    /// Smallest interval covering the whole set.
    pub fn hull(&self) -> Option<TimeInterval> {
        let first = self.intervals.first()?;
        let last = self.intervals.last()?;
        Some(TimeInterval {
            start: first.start,
            end: last.end,
        })
    }

    /// Measure of the intersection with `other` (two-pointer sweep).
    pub fn intersection_measure(&self, other: &IntervalSet) -> f64 {
        let (a, b) = (&self.intervals, &other.intervals);
        let (mut i, mut j) = (0, 0);
        let mut total = 0.0;
        while i < a.len() && j < b.len() {
            total += a[i].overlap(&b[j]);
            if a[i].end < b[j].end {
                i += 1;
            } else {
                j += 1;
            }
        }
        total
    }

    /// Whether any member intersects `other` in a set of positive measure.
    pub fn overlaps_positively(&self, other: &IntervalSet) -> bool {
        self.intersection_measure(other) > 0.0
    }

    /// True when every member lies inside the union of `cover`.
    pub fn within(&self, cover: &IntervalSet) -> bool {
        self.intervals.iter().all(|iv| {
            cover
                .intervals
                .iter()
                .any(|c| c.start <= iv.start + 1e-9 && iv.end <= c.end + 1e-9)
        })
    }
}

/// Sorts and merges overlapping or touching intervals.
pub fn canonicalize(mut intervals: Vec<TimeInterval>) -> IntervalSet {
    intervals.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    let mut merged: Vec<TimeInterval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => merged.push(iv),
        }
    }
    IntervalSet { intervals: merged }
}

/// Union-semantics IoU between two canonical interval sets.
///
/// Both empty scores 1 and exactly one empty scores 0. When both sets only
/// contain points the single-interval point convention applies.
pub fn interval_set_iou(pred: &IntervalSet, gt: &IntervalSet) -> f64 {
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let inter = pred.intersection_measure(gt);
    let union = pred.measure() + gt.measure() - inter;
    if union <= 0.0 {
        return if pred == gt { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}
