//! Batch CART regression trees fitted to (observation, Q) pairs.
//!
//! Greedy recursive variance-reduction splitting with midpoint candidate
//! thresholds; each leaf predicts the arithmetic mean of its training
//! targets. Fitting is a pure, deterministic function of the dataset order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::QSource;
use crate::types::{ActionId, Observation, QVector, TransitionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartConfig {
    pub min_leaf: usize,
    pub max_depth: usize,
}

impl Default for CartConfig {
    fn default() -> Self {
        CartConfig {
            min_leaf: 8,
            max_depth: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CartNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<CartNode>,
        right: Box<CartNode>,
    },
    Leaf {
        mean: f64,
        count: usize,
    },
}

impl CartNode {
    fn predict(&self, obs: &Observation) -> f64 {
        match self {
            CartNode::Leaf { mean, .. } => *mean,
            CartNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                if obs.values()[*feature] < *threshold {
                    left.predict(obs)
                } else {
                    right.predict(obs)
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            CartNode::Leaf { .. } => 1,
            CartNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CartTree {
    pub feature_count: usize,
    pub config: CartConfig,
    pub root: CartNode,
}

impl CartTree {
    pub fn predict(&self, obs: &Observation) -> Result<f64> {
        if obs.len() != self.feature_count {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count,
                got: obs.len(),
            });
        }
        Ok(self.root.predict(obs))
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }
}

/// Fits one regression tree to the records carrying `action`.
pub fn cart_fit(records: &[TransitionRecord], action: ActionId, config: CartConfig) -> Result<CartTree> {
    let rows: Vec<(&Observation, f64)> = records
        .iter()
        .filter(|r| r.action == action)
        .map(|r| (&r.obs, r.q_hat))
        .collect();
    if rows.is_empty() {
        return Err(Error::usage(format!(
            "no records for action {}",
            action.index()
        )));
    }
    let feature_count = rows[0].0.len();
    let idx: Vec<usize> = (0..rows.len()).collect();
    let root = build(&rows, idx, 0, &config);
    Ok(CartTree {
        feature_count,
        config,
        root,
    })
}

fn mean_of(rows: &[(&Observation, f64)], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| rows[i].1).sum::<f64>() / idx.len() as f64
}

fn build(rows: &[(&Observation, f64)], idx: Vec<usize>, depth: usize, config: &CartConfig) -> CartNode {
    let leaf = |idx: &[usize]| CartNode::Leaf {
        mean: mean_of(rows, idx),
        count: idx.len(),
    };
    if depth >= config.max_depth || idx.len() < 2 * config.min_leaf {
        return leaf(&idx);
    }
    let Some((feature, threshold)) = best_split(rows, &idx, config.min_leaf) else {
        return leaf(&idx);
    };
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for &i in &idx {
        if rows[i].0.values()[feature] < threshold {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    CartNode::Internal {
        feature,
        threshold,
        left: Box::new(build(rows, left, depth + 1, config)),
        right: Box::new(build(rows, right, depth + 1, config)),
    }
}

/// Exhaustive scan over sorted midpoints with prefix sums; ties resolve
/// toward the lowest feature index, then the lowest threshold.
fn best_split(rows: &[(&Observation, f64)], idx: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
    let n = idx.len();
    let features = rows[idx[0]].0.len();
    let total: f64 = idx.iter().map(|&i| rows[i].1).sum();
    let total_sq: f64 = idx.iter().map(|&i| rows[i].1 * rows[i].1).sum();
    let parent_sse = total_sq - total * total / n as f64;
    if parent_sse <= 0.0 {
        return None; // constant targets
    }

    let mut best: Option<(usize, f64, f64)> = None; // feature, threshold, gain
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for feature in 0..features {
        order.clear();
        order.extend_from_slice(idx);
        order.sort_by(|&a, &b| {
            rows[a].0.values()[feature]
                .partial_cmp(&rows[b].0.values()[feature])
                .expect("finite features")
        });
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for (k, &i) in order.iter().enumerate().take(n - 1) {
            let y = rows[i].1;
            left_sum += y;
            left_sq += y * y;
            let v = rows[i].0.values()[feature];
            let v_next = rows[order[k + 1]].0.values()[feature];
            if v == v_next {
                continue;
            }
            let n_left = k + 1;
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            // Gain = parent SSE - (left SSE + right SSE); all share n.
            let right_sum = total - left_sum;
            let right_sq = total_sq - left_sq;
            let sse_left = left_sq - left_sum * left_sum / n_left as f64;
            let sse_right = right_sq - right_sum * right_sum / n_right as f64;
            let gain = parent_sse - sse_left - sse_right;
            if gain <= 0.0 {
                continue;
            }
            match best {
                Some((_, _, b)) if gain <= b => {}
                _ => best = Some((feature, (v + v_next) / 2.0, gain)),
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}

/// Per-action CART trees assembled into one Q source.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CartForest {
    pub trees: Vec<CartTree>,
}

impl CartForest {
    pub fn fit(records: &[TransitionRecord], action_count: usize, config: CartConfig) -> Result<Self> {
        let trees = (0..action_count)
            .map(|a| cart_fit(records, ActionId(a), config))
            .collect::<Result<_>>()?;
        Ok(CartForest { trees })
    }

    pub fn predict(&self, obs: &Observation, action: ActionId) -> Result<f64> {
        self.trees
            .get(action.index())
            .ok_or_else(|| Error::usage(format!("action {} out of range", action.index())))?
            .predict(obs)
    }

    pub fn leaf_count(&self) -> usize {
        self.trees.iter().map(|t| t.leaf_count()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

impl QSource for CartForest {
    fn q_vector(&self, obs: &Observation) -> Result<QVector> {
        let values: Vec<f64> = self
            .trees
            .iter()
            .map(|t| t.predict(obs))
            .collect::<Result<_>>()?;
        QVector::new(values)
    }
}
