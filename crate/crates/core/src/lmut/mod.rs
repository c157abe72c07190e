//! The linear model U-tree learner.
//!
//! One binary tree per action. Each leaf owns a linear model over the
//! features, a bounded FIFO buffer of recent transitions, and optional
//! MDP statistics. Learning alternates a data-gathering phase (route each
//! transition to its leaf, update buffers and statistics) with a node
//! splitting phase (refit leaf models by SGD; when a fit has plateaued,
//! split the leaf on the distinction with the best variance reduction of
//! its buffered Q values).

mod mdp;
mod sgd;
mod split;
mod tree;

pub use mdp::{LeafMdp, MdpStats, SuccessorStats};
pub use sgd::{buffer_mse, decayed_alpha, sample_gradient, sgd_update};
pub use split::{
    best_distinction, candidate_thresholds, get_distinctions, population_variance, split_score,
    SplitScore,
};
pub use tree::{LeafId, LeafNode, LmutTree, Node, SplitAudit};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cell::PartitionCell;
use crate::error::{Error, Result};
use crate::eval::{OnlineQLearner, QSource};
use crate::types::{ActionId, Observation, QVector, TransitionRecord};

/// How the splitting phase decides a leaf's SGD has stalled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitGate {
    /// Attempt a split when the relative error reduction of the SGD pass
    /// is at most `min_improvement`.
    RelativeImprovement,
    /// Attempt a split when the post-SGD training error itself is at most
    /// `min_improvement` (the literal pseudo-code reading).
    AbsoluteError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmutHyperparams {
    /// Relative SGD error-reduction threshold gating split attempts.
    pub min_improvement: f64,
    /// Minimum variance reduction to split, as a fraction of the running
    /// variance of all Q values gathered into the tree.
    pub min_split_fraction: f64,
    /// Absolute override for the minimum variance reduction.
    pub min_split_abs: Option<f64>,
    /// A leaf whose training error is already below this floor never
    /// splits: there is nothing left for new leaves to explain.
    pub min_residual: f64,
    pub flag_mdp: bool,
    pub sgd_epochs: usize,
    pub alpha: f64,
    pub buffer_capacity: usize,
    /// Minimum buffered transitions each child of a split must receive.
    pub min_child: usize,
    pub candidates_per_feature: usize,
    pub gate: SplitGate,
}

impl Default for LmutHyperparams {
    fn default() -> Self {
        LmutHyperparams {
            min_improvement: 0.05,
            min_split_fraction: 0.01,
            min_split_abs: None,
            min_residual: 1e-9,
            flag_mdp: false,
            sgd_epochs: 10,
            alpha: 0.01,
            buffer_capacity: 512,
            min_child: 16,
            candidates_per_feature: 20,
            gate: SplitGate::RelativeImprovement,
        }
    }
}

impl LmutHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_improvement) {
            return Err(Error::usage("min_improvement must lie in [0, 1]"));
        }
        if self.min_split_fraction < 0.0
            || self.alpha <= 0.0
            || self.sgd_epochs == 0
            || self.buffer_capacity == 0
            || self.min_child == 0
            || self.candidates_per_feature == 0
        {
            return Err(Error::usage("hyperparameters must be positive"));
        }
        if 2 * self.min_child > self.buffer_capacity {
            return Err(Error::usage(
                "buffer capacity cannot hold two minimum-size children",
            ));
        }
        Ok(())
    }
}

/// Numerical floor for the relative-improvement denominator.
const EPS_NUM: f64 = 1e-12;

/// A per-action ensemble of linear model U-trees.
#[derive(Debug, Clone)]
pub struct LmutForest {
    feature_count: usize,
    gamma: f64,
    hyper: LmutHyperparams,
    trees: Vec<LmutTree>,
}

impl LmutForest {
    pub fn new(
        feature_count: usize,
        action_count: usize,
        gamma: f64,
        hyper: LmutHyperparams,
    ) -> Result<Self> {
        hyper.validate()?;
        if feature_count == 0 || action_count == 0 {
            return Err(Error::usage("feature and action counts must be positive"));
        }
        let trees = (0..action_count)
            .map(|_| LmutTree::new(feature_count, hyper.flag_mdp))
            .collect();
        Ok(LmutForest {
            feature_count,
            gamma,
            hyper,
            trees,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn action_count(&self) -> usize {
        self.trees.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn hyperparams(&self) -> &LmutHyperparams {
        &self.hyper
    }

    pub fn tree(&self, action: ActionId) -> &LmutTree {
        &self.trees[action.index()]
    }

    pub fn trees(&self) -> &[LmutTree] {
        &self.trees
    }

    pub fn leaf_count(&self) -> usize {
        self.trees.iter().map(|t| t.root.leaf_count()).sum()
    }

    fn check_record(&self, rec: &TransitionRecord) -> Result<()> {
        if rec.obs.len() != self.feature_count {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count,
                got: rec.obs.len(),
            });
        }
        if rec.action.index() >= self.trees.len() {
            return Err(Error::usage(format!(
                "action {} out of range (|A| = {})",
                rec.action.index(),
                self.trees.len()
            )));
        }
        Ok(())
    }

    /// Data-gathering phase: each transition joins the buffer of the leaf
    /// reached by its observation in the acting action's tree; full
    /// buffers evict their oldest record.
    pub fn gather(&mut self, batch: &[TransitionRecord]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::usage("gather requires a non-empty batch"));
        }
        for rec in batch {
            self.check_record(rec)?;
        }
        for rec in batch {
            self.trees[rec.action.index()].gather_one(rec, self.hyper.buffer_capacity);
        }
        Ok(())
    }

    /// Node-splitting phase over every leaf that gathered new data:
    /// refit by SGD, and when the refit improvement is insufficient, split
    /// on the best admissible distinction (children inherit the parent's
    /// weights before their own refit).
    pub fn split_phase(&mut self) -> Result<()> {
        let hyper = self.hyper.clone();
        for tree in &mut self.trees {
            let min_split = hyper
                .min_split_abs
                .unwrap_or(hyper.min_split_fraction * tree.root_variance());
            let mut next_id = tree.next_leaf_id;
            let mut any_split = false;
            split_pass(&mut tree.root, &hyper, min_split, &mut next_id, &mut any_split)?;
            tree.next_leaf_id = next_id;
            if any_split && hyper.flag_mdp {
                tree.rebuild_mdp();
            }
        }
        Ok(())
    }

    /// Routes in the action's tree and evaluates the leaf linear model.
    pub fn predict(&self, obs: &Observation, action: ActionId) -> Result<f64> {
        if obs.len() != self.feature_count {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count,
                got: obs.len(),
            });
        }
        if action.index() >= self.trees.len() {
            return Err(Error::usage(format!(
                "action {} out of range (|A| = {})",
                action.index(),
                self.trees.len()
            )));
        }
        Ok(self.trees[action.index()].root.leaf_for(obs).predict(obs))
    }

    /// Per-action predictions assembled into a Q-vector.
    pub fn predict_q_vector(&self, obs: &Observation) -> Result<QVector> {
        let values: Vec<f64> = (0..self.trees.len())
            .map(|a| self.predict(obs, ActionId(a)))
            .collect::<Result<_>>()?;
        QVector::new(values)
    }

    /// Value iteration over each tree's leaf MDP; returns one leaf-id ->
    /// Q map per action tree.
    pub fn mdp_value_iteration(&self) -> Result<Vec<BTreeMap<LeafId, f64>>> {
        if !self.hyper.flag_mdp {
            return Err(Error::usage("MDP statistics are disabled (flag_mdp)"));
        }
        let mut out = Vec::with_capacity(self.trees.len());
        for tree in &self.trees {
            let mut leaf_ids = Vec::new();
            let mut stats = Vec::new();
            tree.root.for_each_leaf(&mut |leaf| {
                leaf_ids.push(leaf.id);
                stats.push(vec![leaf.mdp.clone()]);
            });
            let mdp = LeafMdp { leaf_ids, stats };
            if mdp.is_empty() {
                return Err(Error::usage("no MDP statistics gathered yet"));
            }
            let q = mdp.value_iteration(self.gamma, 1e-6, 1000);
            out.push(
                mdp.leaf_ids
                    .iter()
                    .zip(q)
                    .map(|(&id, row)| (id, row[0]))
                    .collect(),
            );
        }
        Ok(out)
    }

    /// Leaves of one action tree with their partition cells.
    pub fn leaves_with_cells(&self, action: ActionId) -> Vec<(&LeafNode, PartitionCell)> {
        self.trees[action.index()]
            .root
            .leaves_with_cells(self.feature_count)
    }
}

fn split_pass(
    node: &mut Node,
    hyper: &LmutHyperparams,
    min_split: f64,
    next_id: &mut LeafId,
    any_split: &mut bool,
) -> Result<()> {
    match node {
        Node::Internal { left, right, .. } => {
            split_pass(left, hyper, min_split, next_id, any_split)?;
            split_pass(right, hyper, min_split, next_id, any_split)?;
            Ok(())
        }
        Node::Leaf(leaf) => {
            if leaf.fresh == 0 || leaf.buffer.is_empty() {
                return Ok(());
            }
            leaf.fresh = 0;
            let err_before = buffer_mse(leaf);
            let err_after = sgd_update(leaf, hyper.sgd_epochs, hyper.alpha)?;

            let stalled = match hyper.gate {
                SplitGate::RelativeImprovement => {
                    let improvement = (err_before - err_after) / err_before.max(EPS_NUM);
                    improvement <= hyper.min_improvement
                }
                SplitGate::AbsoluteError => err_after <= hyper.min_improvement,
            };
            if !stalled || err_after <= hyper.min_residual {
                return Ok(());
            }

            let distinctions =
                get_distinctions(&leaf.buffer, hyper.min_child, hyper.candidates_per_feature);
            let Some(((feature, threshold), score)) =
                best_distinction(&leaf.buffer, &distinctions, min_split)
            else {
                return Ok(());
            };

            *any_split = true;
            let leaf = match std::mem::replace(node, Node::leaf(0, 0, false)) {
                Node::Leaf(leaf) => leaf,
                Node::Internal { .. } => unreachable!(),
            };
            *node = split_leaf(leaf, feature, threshold, score, next_id, hyper);
            if let Node::Internal { left, right, .. } = node {
                for child in [left, right] {
                    if let Node::Leaf(child_leaf) = child.as_mut() {
                        if !child_leaf.buffer.is_empty() {
                            sgd_update(child_leaf, hyper.sgd_epochs, hyper.alpha)?;
                        }
                    }
                }
            }
            Ok(())
        }
    }
}

/// Splits a leaf into an internal node with two fresh children: the buffer
/// is partitioned by the distinction, both children inherit the parent's
/// weights, and the audit snapshot for feature influence is recorded.
fn split_leaf(
    leaf: LeafNode,
    feature: usize,
    threshold: f64,
    score: SplitScore,
    next_id: &mut LeafId,
    hyper: &LmutHyperparams,
) -> Node {
    let features = leaf.weights.len();
    let mut left = LeafNode::new(*next_id, features, hyper.flag_mdp);
    let mut right = LeafNode::new(*next_id + 1, features, hyper.flag_mdp);
    *next_id += 2;

    left.weights = leaf.weights.clone();
    left.bias = leaf.bias;
    right.weights = leaf.weights.clone();
    right.bias = leaf.bias;

    for rec in &leaf.buffer {
        if rec.obs.values()[feature] < threshold {
            left.buffer.push_back(rec.clone());
        } else {
            right.buffer.push_back(rec.clone());
        }
    }
    left.rebuild_stats_from_buffer();
    right.rebuild_stats_from_buffer();

    let audit = SplitAudit {
        var_parent: score.var_parent,
        child_n: [score.n_left, score.n_right],
        child_var: [score.var_left, score.var_right],
        weight_f_sq: leaf.weights[feature] * leaf.weights[feature],
        weight_norm_sq: leaf.weights.iter().map(|w| w * w).sum(),
    };

    Node::Internal {
        feature,
        threshold,
        audit,
        left: Box::new(Node::Leaf(left)),
        right: Box::new(Node::Leaf(right)),
    }
}

impl QSource for LmutForest {
    fn q_vector(&self, obs: &Observation) -> Result<QVector> {
        self.predict_q_vector(obs)
    }
}

impl OnlineQLearner for LmutForest {
    fn predict_record(&self, record: &TransitionRecord) -> Result<f64> {
        self.predict(&record.obs, record.action)
    }

    fn absorb_batch(&mut self, batch: &[TransitionRecord]) -> Result<()> {
        self.gather(batch)?;
        self.split_phase()
    }

    fn leaf_count(&self) -> usize {
        self.leaf_count()
    }
}

// ---------------------------------------------------------------------------
// Serialization: nested node objects per action tree. Buffers are training
// state and do not persist; predictions round-trip bit-identically.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRepr {
    Internal {
        feature: usize,
        threshold: f64,
        audit: SplitAudit,
        left: Box<NodeRepr>,
        right: Box<NodeRepr>,
    },
    Leaf {
        id: LeafId,
        weights: Vec<f64>,
        bias: f64,
        count: u64,
        var: f64,
        q_mean: f64,
        centroid: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mdp: Option<MdpStats>,
    },
}

impl NodeRepr {
    fn from_node(node: &Node) -> NodeRepr {
        match node {
            Node::Internal {
                feature,
                threshold,
                audit,
                left,
                right,
            } => NodeRepr::Internal {
                feature: *feature,
                threshold: *threshold,
                audit: audit.clone(),
                left: Box::new(NodeRepr::from_node(left)),
                right: Box::new(NodeRepr::from_node(right)),
            },
            Node::Leaf(leaf) => NodeRepr::Leaf {
                id: leaf.id,
                weights: leaf.weights.clone(),
                bias: leaf.bias,
                count: leaf.visits,
                var: leaf.q_variance(),
                q_mean: leaf.q_mean,
                centroid: leaf.centroid(),
                mdp: leaf.mdp.clone(),
            },
        }
    }

    fn into_node(self, features: usize) -> Node {
        match self {
            NodeRepr::Internal {
                feature,
                threshold,
                audit,
                left,
                right,
            } => Node::Internal {
                feature,
                threshold,
                audit,
                left: Box::new(left.into_node(features)),
                right: Box::new(right.into_node(features)),
            },
            NodeRepr::Leaf {
                id,
                weights,
                bias,
                count,
                var,
                q_mean,
                centroid,
                mdp,
            } => {
                let mut leaf = LeafNode::new(id, features, mdp.is_some());
                leaf.weights = weights;
                leaf.bias = bias;
                leaf.visits = count;
                leaf.q_mean = q_mean;
                leaf.q_m2 = var * count as f64;
                leaf.obs_sum = centroid
                    .map(|c| c.iter().map(|v| v * count as f64).collect())
                    .unwrap_or_else(|| vec![0.0; features]);
                leaf.mdp = mdp;
                Node::Leaf(leaf)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TreeRepr {
    q_count: u64,
    q_mean: f64,
    q_m2: f64,
    root: NodeRepr,
}

/// JSON form of a forest.
#[derive(Serialize, Deserialize)]
pub struct ForestRepr {
    feature_count: usize,
    gamma: f64,
    hyper: LmutHyperparams,
    trees: Vec<TreeRepr>,
}

impl From<&LmutForest> for ForestRepr {
    fn from(f: &LmutForest) -> ForestRepr {
        ForestRepr {
            feature_count: f.feature_count,
            gamma: f.gamma,
            hyper: f.hyper.clone(),
            trees: f
                .trees
                .iter()
                .map(|t| TreeRepr {
                    q_count: t.q_count,
                    q_mean: t.q_mean,
                    q_m2: t.q_m2,
                    root: NodeRepr::from_node(&t.root),
                })
                .collect(),
        }
    }
}

impl TryFrom<ForestRepr> for LmutForest {
    type Error = Error;

    fn try_from(repr: ForestRepr) -> Result<LmutForest> {
        repr.hyper.validate()?;
        let features = repr.feature_count;
        let trees = repr
            .trees
            .into_iter()
            .map(|t| {
                let root = t.root.into_node(features);
                let mut max_id = 0;
                root.for_each_leaf(&mut |l| max_id = max_id.max(l.id));
                LmutTree {
                    root,
                    next_leaf_id: max_id + 1,
                    q_count: t.q_count,
                    q_mean: t.q_mean,
                    q_m2: t.q_m2,
                }
            })
            .collect();
        Ok(LmutForest {
            feature_count: repr.feature_count,
            gamma: repr.gamma,
            hyper: repr.hyper,
            trees,
        })
    }
}

impl LmutForest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ForestRepr::from(self))?)
    }

    pub fn from_json(json: &str) -> Result<LmutForest> {
        let repr: ForestRepr = serde_json::from_str(json)?;
        LmutForest::try_from(repr)
    }
}
