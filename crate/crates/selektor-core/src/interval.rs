//! Unions of disjoint real intervals.
//!
//! These show up as the truncation support of one-dimensional statistics:
//! moving along a fixed direction through a union of polytopes traces out a
//! union of chords, and the law of the statistic is the ambient Gaussian
//! restricted to that union.

use serde::{Deserialize, Serialize};

/// A finite union of disjoint open-ended intervals `(lo, hi)`, sorted by
/// left endpoint. Endpoints may be infinite. Intervals of zero or negative
/// width are dropped at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalUnion {
    intervals: Vec<(f64, f64)>,
}

impl IntervalUnion {
    /// Normalizes an arbitrary collection of candidate intervals: drops empty
    /// ones, sorts, and merges overlaps or touching endpoints.
    pub fn new(mut raw: Vec<(f64, f64)>) -> Self {
        raw.retain(|&(lo, hi)| lo < hi && !lo.is_nan() && !hi.is_nan());
        raw.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (lo, hi) in raw {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        IntervalUnion { intervals: merged }
    }

    pub fn empty() -> Self {
        IntervalUnion { intervals: vec![] }
    }

    /// The whole real line.
    pub fn full() -> Self {
        IntervalUnion {
            intervals: vec![(f64::NEG_INFINITY, f64::INFINITY)],
        }
    }

    pub fn single(lo: f64, hi: f64) -> Self {
        Self::new(vec![(lo, hi)])
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= x && x <= hi)
    }

    pub fn lower_bound(&self) -> Option<f64> {
        self.intervals.first().map(|iv| iv.0)
    }

    pub fn upper_bound(&self) -> Option<f64> {
        self.intervals.last().map(|iv| iv.1)
    }

    /// Pairwise intersection of two unions.
    pub fn intersect(&self, other: &IntervalUnion) -> IntervalUnion {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.intervals.len() && j < other.intervals.len() {
            let a = self.intervals[i];
            let b = other.intervals[j];
            let lo = a.0.max(b.0);
            let hi = a.1.min(b.1);
            if lo < hi {
                out.push((lo, hi));
            }
            if a.1 < b.1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalUnion { intervals: out }
    }

    /// Total length; infinite if any piece is unbounded.
    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(|&(lo, hi)| hi - lo).sum()
    }

    /// Affine image `{a*x + b : x in self}`. Requires `a != 0`.
    pub fn affine(&self, a: f64, b: f64) -> IntervalUnion {
        assert!(a != 0.0, "degenerate affine map");
        let mapped = self
            .intervals
            .iter()
            .map(|&(lo, hi)| {
                let (x, y) = (a * lo + b, a * hi + b);
                if x <= y {
                    (x, y)
                } else {
                    (y, x)
                }
            })
            .collect();
        IntervalUnion::new(mapped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merges_overlaps_and_sorts() {
        let u = IntervalUnion::new(vec![(2.0, 3.0), (-1.0, 0.5), (0.5, 1.0), (2.5, 4.0)]);
        assert_eq!(u.intervals(), &[(-1.0, 1.0), (2.0, 4.0)]);
    }

    #[test]
    fn contains_and_bounds() {
        let u = IntervalUnion::new(vec![(f64::NEG_INFINITY, -2.5), (2.5, f64::INFINITY)]);
        assert!(u.contains(-3.0) && u.contains(3.0) && !u.contains(0.0));
        assert_eq!(u.lower_bound(), Some(f64::NEG_INFINITY));
        assert_eq!(u.upper_bound(), Some(f64::INFINITY));
    }

    #[test]
    fn intersect_unions() {
        let a = IntervalUnion::new(vec![(0.0, 2.0), (3.0, 5.0)]);
        let b = IntervalUnion::new(vec![(1.0, 4.0)]);
        assert_eq!(a.intersect(&b).intervals(), &[(1.0, 2.0), (3.0, 4.0)]);
        assert!(a.intersect(&IntervalUnion::empty()).is_empty());
    }

    #[test]
    fn affine_flips_orientation() {
        let a = IntervalUnion::new(vec![(0.0, 1.0), (2.0, 3.0)]);
        let m = a.affine(-2.0, 1.0);
        assert_eq!(m.intervals(), &[(-5.0, -3.0), (-1.0, 1.0)]);
    }
}
