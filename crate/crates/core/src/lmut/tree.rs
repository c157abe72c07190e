//! Tree structure, routing and the data-gathering phase.

use std::collections::VecDeque;

use crate::cell::PartitionCell;
use crate::types::{Observation, TransitionRecord};

use super::mdp::MdpStats;

pub type LeafId = u64;

/// Statistics snapshotted at the moment a leaf was split; the audit trail
/// feature-influence reports are computed from.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitAudit {
    /// Population variance of the buffered Q values at split time.
    pub var_parent: f64,
    pub child_n: [usize; 2],
    pub child_var: [f64; 2],
    /// Squared parent weight of the split feature at split time.
    pub weight_f_sq: f64,
    /// Squared norm of the full parent weight vector at split time.
    pub weight_norm_sq: f64,
}

#[derive(Debug, Clone)]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        audit: SplitAudit,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf(LeafNode),
}

/// A leaf: linear model, bounded transition buffer and running statistics.
#[derive(Debug, Clone)]
pub struct LeafNode {
    pub id: LeafId,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Transitions gathered here since the leaf was created.
    pub visits: u64,
    /// Welford accumulator over gathered Q values.
    pub q_mean: f64,
    pub q_m2: f64,
    /// Sum of gathered observations, for the data centroid.
    pub obs_sum: Vec<f64>,
    pub buffer: VecDeque<TransitionRecord>,
    /// Records gathered since the last splitting phase.
    pub fresh: usize,
    pub mdp: Option<MdpStats>,
}

impl LeafNode {
    pub fn new(id: LeafId, features: usize, flag_mdp: bool) -> Self {
        LeafNode {
            id,
            weights: vec![0.0; features],
            bias: 0.0,
            visits: 0,
            q_mean: 0.0,
            q_m2: 0.0,
            obs_sum: vec![0.0; features],
            buffer: VecDeque::new(),
            fresh: 0,
            mdp: flag_mdp.then(MdpStats::default),
        }
    }

    pub fn predict(&self, obs: &Observation) -> f64 {
        let mut sum = self.bias;
        for (w, x) in self.weights.iter().zip(obs.values()) {
            sum += w * x;
        }
        sum
    }

    /// Population variance of the gathered Q values (the leaf's var_N).
    pub fn q_variance(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.q_m2 / self.visits as f64
        }
    }

    pub fn centroid(&self) -> Option<Vec<f64>> {
        if self.visits == 0 {
            return None;
        }
        let n = self.visits as f64;
        Some(self.obs_sum.iter().map(|s| s / n).collect())
    }

    fn absorb_stats(&mut self, rec: &TransitionRecord) {
        self.visits += 1;
        let n = self.visits as f64;
        let delta = rec.q_hat - self.q_mean;
        self.q_mean += delta / n;
        self.q_m2 += delta * (rec.q_hat - self.q_mean);
        for (s, x) in self.obs_sum.iter_mut().zip(rec.obs.values()) {
            *s += x;
        }
        self.fresh += 1;
    }

    /// Rebuilds visit statistics from the current buffer (used after a
    /// split hands this leaf its share of the parent's records).
    pub fn rebuild_stats_from_buffer(&mut self) {
        self.visits = 0;
        self.q_mean = 0.0;
        self.q_m2 = 0.0;
        for s in self.obs_sum.iter_mut() {
            *s = 0.0;
        }
        let records: Vec<TransitionRecord> = self.buffer.iter().cloned().collect();
        for rec in &records {
            self.absorb_stats(rec);
        }
    }
}

impl Node {
    pub fn leaf(id: LeafId, features: usize, flag_mdp: bool) -> Self {
        Node::Leaf(LeafNode::new(id, features, flag_mdp))
    }

    /// Routes down the distinctions: left when value < threshold.
    pub fn leaf_for(&self, obs: &Observation) -> &LeafNode {
        match self {
            Node::Leaf(leaf) => leaf,
            Node::Internal {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                if obs.values()[*feature] < *threshold {
                    left.leaf_for(obs)
                } else {
                    right.leaf_for(obs)
                }
            }
        }
    }

    pub fn leaf_for_mut(&mut self, obs: &Observation) -> &mut LeafNode {
        match self {
            Node::Leaf(leaf) => leaf,
            Node::Internal {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                if obs.values()[*feature] < *threshold {
                    left.leaf_for_mut(obs)
                } else {
                    right.leaf_for_mut(obs)
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn for_each_leaf<'a>(&'a self, f: &mut impl FnMut(&'a LeafNode)) {
        match self {
            Node::Leaf(leaf) => f(leaf),
            Node::Internal { left, right, .. } => {
                left.for_each_leaf(f);
                right.for_each_leaf(f);
            }
        }
    }

    pub fn for_each_leaf_mut(&mut self, f: &mut impl FnMut(&mut LeafNode)) {
        match self {
            Node::Leaf(leaf) => f(leaf),
            Node::Internal { left, right, .. } => {
                left.for_each_leaf_mut(f);
                right.for_each_leaf_mut(f);
            }
        }
    }

    /// Leaves paired with the partition cell reconstructed from the root path.
    pub fn leaves_with_cells(&self, features: usize) -> Vec<(&LeafNode, PartitionCell)> {
        let mut out = Vec::new();
        self.collect_cells(PartitionCell::unconstrained(features), &mut out);
        out
    }

    fn collect_cells<'a>(
        &'a self,
        cell: PartitionCell,
        out: &mut Vec<(&'a LeafNode, PartitionCell)>,
    ) {
        match self {
            Node::Leaf(leaf) => out.push((leaf, cell)),
            Node::Internal {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                left.collect_cells(cell.refine_below(*feature, *threshold), out);
                right.collect_cells(cell.refine_at_or_above(*feature, *threshold), out);
            }
        }
    }
}

/// One per-action tree plus its running target-variance estimate.
#[derive(Debug, Clone)]
pub struct LmutTree {
    pub root: Node,
    pub next_leaf_id: LeafId,
    /// Welford accumulator over every Q value ever gathered into this tree;
    /// its variance anchors the relative minimum-split threshold.
    pub q_count: u64,
    pub q_mean: f64,
    pub q_m2: f64,
}

impl LmutTree {
    pub fn new(features: usize, flag_mdp: bool) -> Self {
        LmutTree {
            root: Node::leaf(0, features, flag_mdp),
            next_leaf_id: 1,
            q_count: 0,
            q_mean: 0.0,
            q_m2: 0.0,
        }
    }

    pub fn root_variance(&self) -> f64 {
        if self.q_count == 0 {
            0.0
        } else {
            self.q_m2 / self.q_count as f64
        }
    }

    /// Data-gathering for one transition already routed to this tree.
    /// When MDP statistics are enabled the successor state is the leaf of
    /// this same tree containing the next observation (terminal steps have
    /// no successor).
    pub fn gather_one(&mut self, rec: &TransitionRecord, buffer_capacity: usize) {
        let successor = if rec.done {
            None
        } else {
            Some(self.root.leaf_for(&rec.next_obs).id)
        };

        self.q_count += 1;
        let delta = rec.q_hat - self.q_mean;
        self.q_mean += delta / self.q_count as f64;
        self.q_m2 += delta * (rec.q_hat - self.q_mean);

        let leaf = self.root.leaf_for_mut(&rec.obs);
        if let Some(mdp) = leaf.mdp.as_mut() {
            mdp.record(successor, rec.reward, rec.q_hat);
        }
        if leaf.buffer.len() == buffer_capacity {
            leaf.buffer.pop_front();
        }
        leaf.buffer.push_back(rec.clone());
        leaf.absorb_stats(rec);
    }

    /// Replays every buffered transition through the current structure to
    /// rebuild MDP statistics with valid successor leaf ids.
    pub fn rebuild_mdp(&mut self) {
        let mut replay: Vec<TransitionRecord> = Vec::new();
        self.root.for_each_leaf_mut(&mut |leaf| {
            if leaf.mdp.is_some() {
                leaf.mdp = Some(MdpStats::default());
            }
            replay.extend(leaf.buffer.iter().cloned());
        });
        for rec in &replay {
            let successor = if rec.done {
                None
            } else {
                Some(self.root.leaf_for(&rec.next_obs).id)
            };
            let leaf = self.root.leaf_for_mut(&rec.obs);
            if let Some(mdp) = leaf.mdp.as_mut() {
                mdp.record(successor, rec.reward, rec.q_hat);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ActionId;

    fn obs(values: &[f64]) -> Observation {
        Observation::new(values.to_vec()).unwrap()
    }

    fn rec(values: &[f64], q: f64) -> TransitionRecord {
        TransitionRecord::new(obs(values), ActionId(0), 0.0, obs(values), q, false).unwrap()
    }

    /// Builds the two-feature example tree: root splits f0 at 0.2; the
    /// left child splits f1 at 1.3, the right child splits f1 at 0.07.
    fn example_tree() -> Node {
        let audit = SplitAudit {
            var_parent: 0.0,
            child_n: [0, 0],
            child_var: [0.0, 0.0],
            weight_f_sq: 0.0,
            weight_norm_sq: 0.0,
        };
        Node::Internal {
            feature: 0,
            threshold: 0.2,
            audit: audit.clone(),
            left: Box::new(Node::Internal {
                feature: 1,
                threshold: 1.3,
                audit: audit.clone(),
                left: Box::new(Node::leaf(3, 2, false)),
                right: Box::new(Node::leaf(4, 2, false)),
            }),
            right: Box::new(Node::Internal {
                feature: 1,
                threshold: 0.07,
                audit,
                left: Box::new(Node::leaf(5, 2, false)),
                right: Box::new(Node::leaf(6, 2, false)),
            }),
        }
    }

    #[test]
    fn single_leaf_routes_everything() {
        let node = Node::leaf(0, 2, false);
        assert_eq!(node.leaf_for(&obs(&[5.0, -3.0])).id, 0);
        assert_eq!(node.leaf_for(&obs(&["-0.0".parse().unwrap(), 0.0])).id, 0);
    }

    #[test]
    fn example_tree_routing() {
        // f0 = 0.1 < 0.2 and f1 = 1.0 < 1.3 lands in leaf 3.
        let tree = example_tree();
        assert_eq!(tree.leaf_for(&obs(&[0.1, 1.0])).id, 3);
        assert_eq!(tree.leaf_for(&obs(&[0.1, 1.3])).id, 4);
        assert_eq!(tree.leaf_for(&obs(&[0.2, 0.0])).id, 5);
        assert_eq!(tree.leaf_for(&obs(&[0.9, 0.07])).id, 6);
    }

    #[test]
    fn routed_leaf_cell_contains_observation() {
        use rand::Rng;
        use rand::SeedableRng;
        let tree = example_tree();
        let cells = tree.leaves_with_cells(2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let o = obs(&[
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ]);
            let routed = tree.leaf_for(&o).id;
            let mut containing = Vec::new();
            for (leaf, cell) in &cells {
                if cell.contains(&o).unwrap() {
                    containing.push(leaf.id);
                }
            }
            assert_eq!(containing, vec![routed]);
        }
    }

    #[test]
    fn cells_pairwise_disjoint_and_cover() {
        let tree = example_tree();
        let cells = tree.leaves_with_cells(2);
        for i in 0..cells.len() {
            for j in (i + 1)..cells.len() {
                assert!(cells[i].1.intersect(&cells[j].1).unwrap().is_none());
            }
        }
    }

    #[test]
    fn buffer_evicts_oldest() {
        let mut tree = LmutTree::new(1, false);
        for i in 0..5 {
            tree.gather_one(&rec(&[i as f64], i as f64), 3);
        }
        let leaf = tree.root.leaf_for(&obs(&[0.0]));
        assert_eq!(leaf.buffer.len(), 3);
        assert_eq!(leaf.buffer[0].q_hat, 2.0);
        assert_eq!(leaf.visits, 5);
    }

    #[test]
    fn welford_matches_two_pass_variance() {
        let mut tree = LmutTree::new(1, false);
        let qs = [1.0, 4.0, -2.0, 0.5, 3.25];
        for &q in &qs {
            tree.gather_one(&rec(&[0.0], q), 16);
        }
        let mean = qs.iter().sum::<f64>() / qs.len() as f64;
        let var = qs.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / qs.len() as f64;
        assert!((tree.root_variance() - var).abs() < 1e-12);
        let leaf = tree.root.leaf_for(&obs(&[0.0]));
        assert!((leaf.q_variance() - var).abs() < 1e-12);
    }
}
