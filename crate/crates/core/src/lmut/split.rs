//! Distinction generation and the variance splitting criterion.
//!
//! Candidate thresholds per feature are midpoints between consecutive
//! distinct buffered values, subsampled to at most `max_candidates` evenly
//! spaced order statistics. A distinction's score is the weighted variance
//! reduction of the buffered Q values it induces; the best distinction
//! wins with ties broken toward the lowest feature index, then the lowest
//! threshold.

use std::collections::VecDeque;

use crate::types::TransitionRecord;

/// Candidate thresholds for one feature: midpoints between consecutive
/// distinct sorted values, subsampled to `max_candidates` evenly spaced
/// order statistics (first and last midpoints always included).
pub fn candidate_thresholds(values: &[f64], max_candidates: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    sorted.dedup();
    if sorted.len() < 2 {
        return Vec::new();
    }
    let midpoints: Vec<f64> = sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    if midpoints.len() <= max_candidates {
        return midpoints;
    }
    let m = midpoints.len();
    let mut picked = Vec::with_capacity(max_candidates);
    for k in 0..max_candidates {
        picked.push(midpoints[k * (m - 1) / (max_candidates - 1)]);
    }
    picked.dedup();
    picked
}

/// Population variance (two-pass, non-negative by construction).
pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Per-child statistics of a scored distinction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitScore {
    /// Variance reduction: var_N - sum_c (n_c / n) var_c. Negative infinity
    /// marks a degenerate (one-sided) distinction.
    pub reduction: f64,
    pub var_parent: f64,
    pub n_left: usize,
    pub n_right: usize,
    pub var_left: f64,
    pub var_right: f64,
}

/// Scores one distinction over the buffered Q values.
pub fn split_score(buffer: &VecDeque<TransitionRecord>, feature: usize, threshold: f64) -> SplitScore {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for rec in buffer {
        if rec.obs.values()[feature] < threshold {
            left.push(rec.q_hat);
        } else {
            right.push(rec.q_hat);
        }
    }
    let all: Vec<f64> = buffer.iter().map(|r| r.q_hat).collect();
    let var_parent = population_variance(&all);
    if left.is_empty() || right.is_empty() {
        return SplitScore {
            reduction: f64::NEG_INFINITY,
            var_parent,
            n_left: left.len(),
            n_right: right.len(),
            var_left: 0.0,
            var_right: 0.0,
        };
    }
    let n = all.len() as f64;
    let var_left = population_variance(&left);
    let var_right = population_variance(&right);
    let weighted = (left.len() as f64 / n) * var_left + (right.len() as f64 / n) * var_right;
    SplitScore {
        reduction: var_parent - weighted,
        var_parent,
        n_left: left.len(),
        n_right: right.len(),
        var_left,
        var_right,
    }
}

/// All admissible distinctions for a leaf buffer: for every feature, the
/// candidate thresholds whose induced children both hold at least
/// `min_child` records. Empty when the buffer is too small.
pub fn get_distinctions(
    buffer: &VecDeque<TransitionRecord>,
    min_child: usize,
    max_candidates: usize,
) -> Vec<(usize, f64)> {
    if buffer.len() < 2 * min_child {
        return Vec::new();
    }
    let features = buffer.front().map(|r| r.obs.len()).unwrap_or(0);
    let mut out = Vec::new();
    let mut column = Vec::with_capacity(buffer.len());
    for feature in 0..features {
        column.clear();
        column.extend(buffer.iter().map(|r| r.obs.values()[feature]));
        for threshold in candidate_thresholds(&column, max_candidates) {
            let n_left = column.iter().filter(|&&v| v < threshold).count();
            let n_right = column.len() - n_left;
            if n_left >= min_child && n_right >= min_child {
                out.push((feature, threshold));
            }
        }
    }
    out
}

/// The best distinction at or above `min_split`, with documented
/// tie-breaking (lowest feature, then lowest threshold). Requires a
/// strictly positive reduction.
pub fn best_distinction(
    buffer: &VecDeque<TransitionRecord>,
    distinctions: &[(usize, f64)],
    min_split: f64,
) -> Option<((usize, f64), SplitScore)> {
    let mut best: Option<((usize, f64), SplitScore)> = None;
    for &(feature, threshold) in distinctions {
        let score = split_score(buffer, feature, threshold);
        if score.reduction <= 0.0 || score.reduction < min_split {
            continue;
        }
        // Candidates arrive ordered by (feature, threshold); strict
        // improvement keeps the earliest on ties.
        match &best {
            Some((_, b)) if score.reduction <= b.reduction => {}
            _ => best = Some(((feature, threshold), score)),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ActionId, Observation, TransitionRecord};

    fn buffer(samples: &[(&[f64], f64)]) -> VecDeque<TransitionRecord> {
        samples
            .iter()
            .map(|(x, q)| {
                let o = Observation::new(x.to_vec()).unwrap();
                TransitionRecord::new(o.clone(), ActionId(0), 0.0, o, *q, false).unwrap()
            })
            .collect()
    }

    #[test]
    fn constant_feature_yields_no_candidate() {
        assert!(candidate_thresholds(&[1.0, 1.0, 1.0], 20).is_empty());
    }

    #[test]
    fn two_values_yield_midpoint() {
        assert_eq!(candidate_thresholds(&[1.0, 3.0], 20), vec![2.0]);
    }

    #[test]
    fn quantile_subsampling_matches_order_statistic_oracle() {
        // 100 distinct values -> 99 midpoints -> exactly 20 candidates at
        // evenly spaced order statistics.
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let got = candidate_thresholds(&values, 20);
        assert_eq!(got.len(), 20);

        // Oracle: enumerate all midpoints, index them directly.
        let all: Vec<f64> = (0..99).map(|i| i as f64 + 0.5).collect();
        let expect: Vec<f64> = (0..20).map(|k| all[k * 98 / 19]).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn hand_computed_variance_reduction() {
        // Q = {1, 1, 5, 5} split into {1,1} | {5,5}: parent var 4,
        // children 0, so the reduction is 4.
        let buf = buffer(&[
            (&[0.0], 1.0),
            (&[1.0], 1.0),
            (&[2.0], 5.0),
            (&[3.0], 5.0),
        ]);
        let score = split_score(&buf, 0, 1.5);
        assert_eq!(score.var_parent, 4.0);
        assert_eq!(score.reduction, 4.0);
        assert_eq!((score.n_left, score.n_right), (2, 2));
    }

    #[test]
    fn constant_targets_score_zero() {
        let buf = buffer(&[(&[0.0], 2.0), (&[1.0], 2.0), (&[2.0], 2.0)]);
        let score = split_score(&buf, 0, 0.5);
        assert_eq!(score.reduction, 0.0);
    }

    #[test]
    fn degenerate_side_scores_negative_infinity() {
        let buf = buffer(&[(&[0.0], 1.0), (&[1.0], 2.0)]);
        let score = split_score(&buf, 0, -10.0);
        assert_eq!(score.reduction, f64::NEG_INFINITY);
    }

    #[test]
    fn min_child_excludes_small_sides() {
        let buf = buffer(&[
            (&[0.0], 1.0),
            (&[1.0], 2.0),
            (&[2.0], 3.0),
            (&[3.0], 4.0),
        ]);
        let d = get_distinctions(&buf, 2, 20);
        // Only the middle threshold leaves two records on each side.
        assert_eq!(d, vec![(0, 1.5)]);
        // Buffer below 2 * min_child yields nothing.
        assert!(get_distinctions(&buf, 3, 20).is_empty());
    }

    /// Exhaustive oracle: best reduction over every (feature, threshold)
    /// pair where thresholds are all midpoints of distinct values.
    fn brute_force_best(buf: &VecDeque<TransitionRecord>) -> Option<((usize, f64), f64)> {
        let features = buf.front().unwrap().obs.len();
        let mut best: Option<((usize, f64), f64)> = None;
        for f in 0..features {
            let col: Vec<f64> = buf.iter().map(|r| r.obs.values()[f]).collect();
            for t in candidate_thresholds(&col, usize::MAX) {
                let s = split_score(buf, f, t);
                if s.reduction <= 0.0 {
                    continue;
                }
                match &best {
                    Some((_, b)) if s.reduction <= *b => {}
                    _ => best = Some(((f, t), s.reduction)),
                }
            }
        }
        best
    }

    #[test]
    fn best_distinction_matches_brute_force_on_small_buffers() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let n = rng.random_range(2..=8);
            let d = rng.random_range(1..=3);
            let samples: Vec<(Vec<f64>, f64)> = (0..n)
                .map(|_| {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                    (x, rng.random_range(-3.0..3.0))
                })
                .collect();
            let owned: Vec<(&[f64], f64)> =
                samples.iter().map(|(x, q)| (x.as_slice(), *q)).collect();
            let buf = buffer(&owned);

            let distinctions = get_distinctions(&buf, 1, usize::MAX);
            let got = best_distinction(&buf, &distinctions, 0.0);
            let expect = brute_force_best(&buf);
            match (got, expect) {
                (None, None) => {}
                (Some(((gf, gt), gs)), Some(((ef, et), es))) => {
                    assert_eq!((gf, gt), (ef, et));
                    assert!((gs.reduction - es).abs() < 1e-12);
                }
                other => panic!("mismatch: {other:?}"),
            }
        }
    }
}
