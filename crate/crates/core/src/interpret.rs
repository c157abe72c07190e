//! Interpretation tools over a trained forest: feature influence, rule
//! extraction and super-pixel highlighting for pixel observations.

use serde::{Deserialize, Serialize};

use crate::cell::PartitionCell;
use crate::envs::FrameGeometry;
use crate::error::{Error, Result};
use crate::lmut::{LmutForest, Node};
use crate::types::{ActionId, Observation, QVector};

/// Per-feature influence with the per-split contributions retained for
/// audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceTable {
    pub influence: Vec<f64>,
    /// (feature, contribution) per historical split, across all trees,
    /// in tree walk order.
    pub contributions: Vec<(usize, f64)>,
}

impl InfluenceTable {
    /// Features ranked by influence, descending; ties by index.
    pub fn ranking(&self) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> =
            self.influence.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked
    }
}

/// Influence of a splitting feature at one node: the variance reduction
/// of the split, weighted by 1 + w_f^2 / |w|^2 from the parent's linear
/// model at split time (factor 1 when all weights were zero).
fn node_contribution(audit: &crate::lmut::SplitAudit) -> f64 {
    let n_total = (audit.child_n[0] + audit.child_n[1]) as f64;
    let weighted_child_var = (audit.child_n[0] as f64 / n_total) * audit.child_var[0]
        + (audit.child_n[1] as f64 / n_total) * audit.child_var[1];
    let reduction = audit.var_parent - weighted_child_var;
    let factor = if audit.weight_norm_sq > 0.0 {
        1.0 + audit.weight_f_sq / audit.weight_norm_sq
    } else {
        1.0
    };
    factor * reduction
}

/// Sums per-node influence over every split of every action tree.
pub fn feature_influence(forest: &LmutForest) -> InfluenceTable {
    let mut influence = vec![0.0; forest.feature_count()];
    let mut contributions = Vec::new();
    for tree in forest.trees() {
        collect(&tree.root, &mut influence, &mut contributions);
    }
    InfluenceTable {
        influence,
        contributions,
    }
}

fn collect(node: &Node, influence: &mut [f64], contributions: &mut Vec<(usize, f64)>) {
    if let Node::Internal {
        feature,
        audit,
        left,
        right,
        ..
    } = node
    {
        let c = node_contribution(audit);
        influence[*feature] += c;
        contributions.push((*feature, c));
        collect(left, influence, contributions);
        collect(right, influence, contributions);
    }
}

/// One extracted rule: a partition cell, its Q-vector evaluated at the
/// cell's visited-data centroid, and the recommended (greedy) action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub cell: PartitionCell,
    pub q: QVector,
    pub visits: u64,
    pub action: ActionId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub rules: Vec<Rule>,
}

/// Top-k rules by visit count from the anchor (action 0) tree. Leaves
/// that never gathered data carry no centroid and are skipped.
pub fn extract_rules(forest: &LmutForest, top_k: usize) -> Result<RuleReport> {
    if forest.action_count() == 0 {
        return Ok(RuleReport { rules: Vec::new() });
    }
    let mut leaves = forest.leaves_with_cells(ActionId(0));
    leaves.sort_by(|a, b| b.0.visits.cmp(&a.0.visits).then(a.0.id.cmp(&b.0.id)));

    let mut rules = Vec::new();
    for (leaf, cell) in leaves.into_iter().take(top_k) {
        let Some(centroid) = leaf.centroid() else {
            continue;
        };
        let obs = Observation::new(centroid)?;
        let q = forest.predict_q_vector(&obs)?;
        rules.push(Rule {
            action: q.greedy(),
            cell,
            q,
            visits: leaf.visits,
        });
    }
    Ok(RuleReport { rules })
}

/// Pixels selected by the super-pixel rule for one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperPixels {
    /// Flat feature indices, sorted ascending.
    pub indices: Vec<usize>,
    /// The same pixels located as (frame, row, col).
    pub located: Vec<(usize, usize, usize)>,
    /// The influence threshold applied (mean of positive influences).
    pub threshold: f64,
}

/// Routes the observation through every action tree and keeps the
/// splitting features along the paths whose influence exceeds the mean
/// positive influence.
pub fn superpixels(
    forest: &LmutForest,
    influence: &InfluenceTable,
    obs: &Observation,
    geometry: FrameGeometry,
) -> Result<SuperPixels> {
    if forest.feature_count() != geometry.feature_count() {
        return Err(Error::usage(format!(
            "forest has {} features but the pixel geometry implies {}; \
             super-pixels need a pixel environment",
            forest.feature_count(),
            geometry.feature_count()
        )));
    }
    if obs.len() != forest.feature_count() {
        return Err(Error::DimensionMismatch {
            expected: forest.feature_count(),
            got: obs.len(),
        });
    }
    let positives: Vec<f64> = influence
        .influence
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .collect();
    let threshold = if positives.is_empty() {
        0.0
    } else {
        positives.iter().sum::<f64>() / positives.len() as f64
    };

    let mut indices = Vec::new();
    for a in 0..forest.action_count() {
        let mut node = &forest.tree(ActionId(a)).root;
        loop {
            match node {
                Node::Leaf(_) => break,
                Node::Internal {
                    feature,
                    threshold: t,
                    left,
                    right,
                    ..
                } => {
                    if influence.influence[*feature] > threshold {
                        indices.push(*feature);
                    }
                    node = if obs.values()[*feature] < *t { left } else { right };
                }
            }
        }
    }
    indices.sort_unstable();
    indices.dedup();
    let located = indices.iter().map(|&i| geometry.locate(i)).collect();
    Ok(SuperPixels {
        indices,
        located,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmut::{LmutHyperparams, SplitAudit};

    #[test]
    fn hand_evaluated_influence() {
        // Unit weight on the split feature: factor 2. Parent var 4,
        // children 0 with equal sizes: reduction 4. Influence 8.
        let audit = SplitAudit {
            var_parent: 4.0,
            child_n: [10, 10],
            child_var: [0.0, 0.0],
            weight_f_sq: 1.0,
            weight_norm_sq: 1.0,
        };
        assert_eq!(node_contribution(&audit), 8.0);
    }

    #[test]
    fn zero_weights_factor_one() {
        let audit = SplitAudit {
            var_parent: 4.0,
            child_n: [5, 5],
            child_var: [0.0, 0.0],
            weight_f_sq: 0.0,
            weight_norm_sq: 0.0,
        };
        assert_eq!(node_contribution(&audit), 4.0);
    }

    fn trained_sign_forest() -> LmutForest {
        use crate::types::{ActionId, Observation, TransitionRecord};
        use rand::Rng;
        use rand::SeedableRng;
        let mut forest = LmutForest::new(2, 1, 0.99, LmutHyperparams::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let batch: Vec<TransitionRecord> = (0..32)
                .map(|_| {
                    let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                    let o = Observation::new(x.to_vec()).unwrap();
                    TransitionRecord::new(
                        o.clone(),
                        ActionId(0),
                        0.0,
                        o,
                        if x[0] < 0.0 { -1.0 } else { 1.0 },
                        false,
                    )
                    .unwrap()
                })
                .collect();
            forest.gather(&batch).unwrap();
            forest.split_phase().unwrap();
        }
        forest
    }

    #[test]
    fn influence_nonnegative_and_decomposes() {
        let forest = trained_sign_forest();
        let table = feature_influence(&forest);
        assert!(table.influence.iter().all(|&v| v >= 0.0));
        assert!(!table.contributions.is_empty(), "no splits recorded");
        // Recompute the table from the audit contributions.
        let mut rebuilt = vec![0.0; forest.feature_count()];
        for &(f, c) in &table.contributions {
            rebuilt[f] += c;
        }
        for (a, b) in rebuilt.iter().zip(&table.influence) {
            assert!((a - b).abs() < 1e-12);
        }
        // The target only depends on feature 0.
        assert!(table.influence[0] > table.influence[1]);
    }

    #[test]
    fn rules_disjoint_and_consistent() {
        let forest = trained_sign_forest();
        let report = extract_rules(&forest, 10).unwrap();
        assert!(!report.rules.is_empty());
        for rule in &report.rules {
            assert_eq!(rule.action, rule.q.greedy());
        }
        for i in 0..report.rules.len() {
            for j in (i + 1)..report.rules.len() {
                assert!(report.rules[i]
                    .cell
                    .intersect(&report.rules[j].cell)
                    .unwrap()
                    .is_none());
            }
        }
    }

    #[test]
    fn depth_one_tree_gives_two_half_cells() {
        let forest = trained_sign_forest();
        let report = extract_rules(&forest, 2).unwrap();
        assert_eq!(report.rules.len(), 2);
    }

    #[test]
    fn empty_forest_empty_report() {
        let forest = LmutForest::new(2, 1, 0.99, LmutHyperparams::default()).unwrap();
        let report = extract_rules(&forest, 5).unwrap();
        assert!(report.rules.is_empty());
    }

    #[test]
    fn superpixels_single_leaf_empty() {
        let geometry = FrameGeometry {
            frames: 1,
            rows: 2,
            cols: 2,
        };
        let forest = LmutForest::new(4, 1, 0.99, LmutHyperparams::default()).unwrap();
        let table = feature_influence(&forest);
        let obs = Observation::new(vec![0.0; 4]).unwrap();
        let sp = superpixels(&forest, &table, &obs, geometry).unwrap();
        assert!(sp.indices.is_empty());
    }

    #[test]
    fn superpixels_reject_non_pixel_shape() {
        let geometry = FrameGeometry {
            frames: 4,
            rows: 16,
            cols: 16,
        };
        let forest = LmutForest::new(2, 1, 0.99, LmutHyperparams::default()).unwrap();
        let table = feature_influence(&forest);
        let obs = Observation::new(vec![0.0, 0.0]).unwrap();
        assert!(superpixels(&forest, &table, &obs, geometry).is_err());
    }

    #[test]
    fn threshold_filters_all_when_above_max() {
        // All positive influences equal: the strict comparison against
        // their mean filters everything.
        let geometry = FrameGeometry {
            frames: 1,
            rows: 1,
            cols: 2,
        };
        let forest = {
            use crate::types::{ActionId, Observation, TransitionRecord};
            let mut f = LmutForest::new(2, 1, 0.99, LmutHyperparams {
                min_child: 2,
                ..LmutHyperparams::default()
            })
            .unwrap();
            // Force one split by streaming a step function many times.
            use rand::Rng;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
            for _ in 0..40 {
                let batch: Vec<TransitionRecord> = (0..16)
                    .map(|_| {
                        let x = [rng.random_range(0.0..1.0), 0.0];
                        let o = Observation::new(x.to_vec()).unwrap();
                        TransitionRecord::new(
                            o.clone(),
                            ActionId(0),
                            0.0,
                            o,
                            if x[0] < 0.5 { 0.0 } else { 1.0 },
                            false,
                        )
                        .unwrap()
                    })
                    .collect();
                f.gather(&batch).unwrap();
                f.split_phase().unwrap();
            }
            f
        };
        let table = feature_influence(&forest);
        let positive = table.influence.iter().filter(|&&v| v > 0.0).count();
        if positive == 1 {
            // Exactly one influential feature: mean equals max, strict
            // comparison keeps nothing.
            let obs = Observation::new(vec![0.25, 0.0]).unwrap();
            let sp = superpixels(&forest, &table, &obs, geometry).unwrap();
            assert!(sp.indices.is_empty());
        }
    }
}
