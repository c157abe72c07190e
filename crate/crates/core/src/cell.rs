//! Partition-cell algebra.
//!
//! A partition cell is the axis-aligned region of feature space owned by
//! one leaf: a conjunction of per-feature half-open intervals `[lo, hi)`.
//! Splits are half-open by convention: the left child takes `value <
//! threshold`, the right child `value >= threshold`, so sibling cells are
//! disjoint and cover the parent exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Observation;

/// Half-open interval `[lo, hi)`; unbounded ends carry infinities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const FULL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::usage(format!("invalid interval [{lo}, {hi})")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v < self.hi
    }

    /// `None` if the intervals do not overlap.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo < hi {
            Some(Interval { lo, hi })
        } else {
            None
        }
    }
}

/// Conjunction of per-feature interval constraints identifying a leaf's region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionCell {
    bounds: Vec<Interval>,
}

impl PartitionCell {
    /// The full feature space: every feature spans `(-inf, +inf)`.
    pub fn unconstrained(features: usize) -> Self {
        PartitionCell {
            bounds: vec![Interval::FULL; features],
        }
    }

    pub fn from_bounds(bounds: Vec<Interval>) -> Self {
        PartitionCell { bounds }
    }

    pub fn features(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[Interval] {
        &self.bounds
    }

    pub fn contains(&self, obs: &Observation) -> Result<bool> {
        if obs.len() != self.bounds.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bounds.len(),
                got: obs.len(),
            });
        }
        Ok(self
            .bounds
            .iter()
            .zip(obs.values())
            .all(|(iv, &v)| iv.contains(v)))
    }

    /// Per-feature intersection; `None` if any interval collapses.
    pub fn intersect(&self, other: &PartitionCell) -> Result<Option<PartitionCell>> {
        if other.bounds.len() != self.bounds.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bounds.len(),
                got: other.bounds.len(),
            });
        }
        let mut bounds = Vec::with_capacity(self.bounds.len());
        for (a, b) in self.bounds.iter().zip(&other.bounds) {
            match a.intersect(b) {
                Some(iv) => bounds.push(iv),
                None => return Ok(None),
            }
        }
        Ok(Some(PartitionCell { bounds }))
    }

    /// Restrict `feature` to values below `threshold` (the left child of a split).
    pub fn refine_below(&self, feature: usize, threshold: f64) -> PartitionCell {
        let mut bounds = self.bounds.clone();
        bounds[feature].hi = bounds[feature].hi.min(threshold);
        PartitionCell { bounds }
    }

    /// Restrict `feature` to values at or above `threshold` (the right child).
    pub fn refine_at_or_above(&self, feature: usize, threshold: f64) -> PartitionCell {
        let mut bounds = self.bounds.clone();
        bounds[feature].lo = bounds[feature].lo.max(threshold);
        PartitionCell { bounds }
    }
}

impl std::fmt::Display for PartitionCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for (j, iv) in self.bounds.iter().enumerate() {
            if *iv == Interval::FULL {
                continue;
            }
            if !first {
                write!(f, ", ")?;
            }
            first = false;
            match (iv.lo.is_finite(), iv.hi.is_finite()) {
                (false, true) => write!(f, "f{j} < {:.6}", iv.hi)?,
                (true, false) => write!(f, "f{j} >= {:.6}", iv.lo)?,
                (true, true) => write!(f, "{:.6} <= f{j} < {:.6}", iv.lo, iv.hi)?,
                (false, false) => unreachable!(),
            }
        }
        if first {
            write!(f, "true")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(values: &[f64]) -> Observation {
        Observation::new(values.to_vec()).unwrap()
    }

    #[test]
    fn contains_table_cell() {
        // f1 < 0.2, f2 < 1.3
        let cell = PartitionCell::from_bounds(vec![
            Interval::new(f64::NEG_INFINITY, 0.2).unwrap(),
            Interval::new(f64::NEG_INFINITY, 1.3).unwrap(),
        ]);
        assert!(cell.contains(&obs(&[0.1, 1.0])).unwrap());
        assert!(!cell.contains(&obs(&[0.3, 1.0])).unwrap());
    }

    #[test]
    fn unconstrained_contains_everything() {
        let cell = PartitionCell::unconstrained(3);
        assert!(cell.contains(&obs(&[1e9, -1e9, 0.0])).unwrap());
    }

    #[test]
    fn half_open_boundary() {
        // f0 >= 0.2
        let cell = PartitionCell::unconstrained(2).refine_at_or_above(0, 0.2);
        assert!(cell.contains(&obs(&[0.2, 0.0])).unwrap());
        assert!(!cell.contains(&obs(&[0.19999, 0.0])).unwrap());
    }

    #[test]
    fn contains_dimension_mismatch() {
        let cell = PartitionCell::unconstrained(2);
        assert!(matches!(
            cell.contains(&obs(&[1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn adjacent_halves_are_disjoint() {
        let parent = PartitionCell::unconstrained(1);
        let left = parent.refine_below(0, 0.2);
        let right = parent.refine_at_or_above(0, 0.2);
        assert!(left.intersect(&right).unwrap().is_none());
    }

    #[test]
    fn intersect_idempotent() {
        let cell = PartitionCell::unconstrained(2)
            .refine_below(0, 1.5)
            .refine_at_or_above(1, -0.5);
        assert_eq!(cell.intersect(&cell).unwrap(), Some(cell.clone()));
    }

    #[test]
    fn intersect_interval_arithmetic() {
        // (0, 2) ∩ (1, 3) = (1, 2)
        let a = PartitionCell::from_bounds(vec![Interval::new(0.0, 2.0).unwrap()]);
        let b = PartitionCell::from_bounds(vec![Interval::new(1.0, 3.0).unwrap()]);
        let hit = a.intersect(&b).unwrap().unwrap();
        assert_eq!(hit.bounds()[0], Interval::new(1.0, 2.0).unwrap());
    }

    #[test]
    fn split_children_cover_parent_interval() {
        let parent = PartitionCell::from_bounds(vec![Interval::new(-1.0, 4.0).unwrap()]);
        let left = parent.refine_below(0, 1.0);
        let right = parent.refine_at_or_above(0, 1.0);
        assert_eq!(left.bounds()[0], Interval::new(-1.0, 1.0).unwrap());
        assert_eq!(right.bounds()[0], Interval::new(1.0, 4.0).unwrap());
        assert!(left.intersect(&right).unwrap().is_none());
    }
}
