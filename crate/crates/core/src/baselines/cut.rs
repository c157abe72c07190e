//! Continuous U-tree learned directly by reinforcement learning.
//!
//! One tree discretizes the state space for all actions; each leaf keeps
//! per-action transition statistics over fellow leaves and per-action Q
//! estimates maintained by value iteration over that leaf-level MDP. No
//! teacher labels are involved: transitions carry only (obs, action,
//! reward, next_obs, done). Splitting reduces the variance of
//! per-transition value samples r + gamma * max_a Q(successor).

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::eval::QSource;
use crate::lmut::{candidate_thresholds, population_variance, LeafMdp, MdpStats};
use crate::teacher::epsilon_at;
use crate::types::{ActionId, Observation, QVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutConfig {
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub min_child: usize,
    pub candidates_per_feature: usize,
    /// Minimum variance reduction of value samples, as a fraction of the
    /// leaf's value-sample variance.
    pub min_split_fraction: f64,
    /// Run a splitting phase every this many gathered transitions.
    pub split_period: usize,
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    /// Growth guard; splitting stops at this many leaves.
    pub max_leaves: usize,
}

impl Default for CutConfig {
    fn default() -> Self {
        CutConfig {
            gamma: 0.99,
            buffer_capacity: 512,
            min_child: 16,
            candidates_per_feature: 20,
            min_split_fraction: 0.05,
            split_period: 32,
            epsilon_start: 1.0,
            epsilon_final: 0.05,
            max_leaves: 128,
        }
    }
}

/// An unlabelled transition: true RL data, no teacher involved.
#[derive(Debug, Clone)]
struct RawTransition {
    obs: Observation,
    action: usize,
    reward: f64,
    next_obs: Observation,
    done: bool,
}

#[derive(Debug, Clone)]
pub struct CutLeaf {
    pub id: u64,
    /// Per-action statistics over successor leaves.
    pub stats: Vec<MdpStats>,
    /// Per-action Q estimates from the latest value iteration.
    pub q: Vec<f64>,
    buffer: VecDeque<RawTransition>,
}

impl CutLeaf {
    fn new(id: u64, actions: usize) -> Self {
        CutLeaf {
            id,
            stats: vec![MdpStats::default(); actions],
            q: vec![0.0; actions],
            buffer: VecDeque::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum CutNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<CutNode>,
        right: Box<CutNode>,
    },
    Leaf(CutLeaf),
}

impl CutNode {
    fn leaf_for(&self, obs: &Observation) -> &CutLeaf {
        match self {
            CutNode::Leaf(leaf) => leaf,
            CutNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                if obs.values()[*feature] < *threshold {
                    left.leaf_for(obs)
                } else {
                    right.leaf_for(obs)
                }
            }
        }
    }

    fn leaf_for_mut(&mut self, obs: &Observation) -> &mut CutLeaf {
        match self {
            CutNode::Leaf(leaf) => leaf,
            CutNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                if obs.values()[*feature] < *threshold {
                    left.leaf_for_mut(obs)
                } else {
                    right.leaf_for_mut(obs)
                }
            }
        }
    }

    fn leaf_count(&self) -> usize {
        match self {
            CutNode::Leaf(_) => 1,
            CutNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    fn for_each_leaf<'a>(&'a self, f: &mut impl FnMut(&'a CutLeaf)) {
        match self {
            CutNode::Leaf(leaf) => f(leaf),
            CutNode::Internal { left, right, .. } => {
                left.for_each_leaf(f);
                right.for_each_leaf(f);
            }
        }
    }

    fn for_each_leaf_mut(&mut self, f: &mut impl FnMut(&mut CutLeaf)) {
        match self {
            CutNode::Leaf(leaf) => f(leaf),
            CutNode::Internal { left, right, .. } => {
                left.for_each_leaf_mut(f);
                right.for_each_leaf_mut(f);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CutTree {
    pub feature_count: usize,
    pub action_count: usize,
    pub config: CutConfig,
    root: CutNode,
    next_leaf_id: u64,
}

impl CutTree {
    pub fn new(feature_count: usize, action_count: usize, config: CutConfig) -> Self {
        CutTree {
            feature_count,
            action_count,
            config,
            root: CutNode::Leaf(CutLeaf::new(0, action_count)),
            next_leaf_id: 1,
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    pub fn q_of(&self, obs: &Observation) -> Result<&CutLeaf> {
        if obs.len() != self.feature_count {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count,
                got: obs.len(),
            });
        }
        Ok(self.root.leaf_for(obs))
    }

    fn gather(&mut self, t: RawTransition) {
        let successor = if t.done {
            None
        } else {
            Some(self.root.leaf_for(&t.next_obs).id)
        };
        let capacity = self.config.buffer_capacity;
        let leaf = self.root.leaf_for_mut(&t.obs);
        leaf.stats[t.action].record(successor, t.reward, 0.0);
        if leaf.buffer.len() == capacity {
            leaf.buffer.pop_front();
        }
        leaf.buffer.push_back(t);
    }

    fn to_leaf_mdp(&self) -> LeafMdp {
        let mut leaf_ids = Vec::new();
        let mut stats = Vec::new();
        self.root.for_each_leaf(&mut |leaf| {
            leaf_ids.push(leaf.id);
            stats.push(leaf.stats.iter().cloned().map(Some).collect());
        });
        LeafMdp { leaf_ids, stats }
    }

    /// Refreshes every leaf's Q estimates to the value-iteration fixed
    /// point of the current leaf MDP.
    pub fn refresh_q(&mut self) {
        let mdp = self.to_leaf_mdp();
        if mdp.is_empty() {
            return;
        }
        let q = mdp.value_iteration(self.config.gamma, 1e-6, 1000);
        let mut i = 0;
        self.root.for_each_leaf_mut(&mut |leaf| {
            leaf.q = q[i].clone();
            i += 1;
        });
    }

    /// Rebuilds every leaf's transition statistics by replaying buffers
    /// through the current structure.
    fn rebuild_stats(&mut self) {
        let actions = self.action_count;
        let mut replay: Vec<RawTransition> = Vec::new();
        self.root.for_each_leaf_mut(&mut |leaf| {
            leaf.stats = vec![MdpStats::default(); actions];
            replay.extend(leaf.buffer.iter().cloned());
        });
        for t in &replay {
            let successor = if t.done {
                None
            } else {
                Some(self.root.leaf_for(&t.next_obs).id)
            };
            let leaf = self.root.leaf_for_mut(&t.obs);
            leaf.stats[t.action].record(successor, t.reward, 0.0);
        }
    }

    /// Value of a buffered transition under the current Q estimates.
    fn sample_value(&self, t: &RawTransition) -> f64 {
        if t.done {
            t.reward
        } else {
            let succ = self.root.leaf_for(&t.next_obs);
            let best = succ.q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            t.reward + self.config.gamma * best
        }
    }

    /// One splitting phase: refresh Q, split any leaf whose best
    /// distinction reduces value-sample variance enough, rebuild.
    pub fn split_phase(&mut self) {
        self.refresh_q();
        if self.leaf_count() >= self.config.max_leaves {
            return;
        }

        // Collect split decisions against the frozen Q estimates.
        struct Decision {
            leaf_id: u64,
            feature: usize,
            threshold: f64,
        }
        let mut decisions: Vec<Decision> = Vec::new();
        let cfg = &self.config;
        let mut leaves: Vec<&CutLeaf> = Vec::new();
        self.root.for_each_leaf(&mut |leaf| leaves.push(leaf));
        for leaf in leaves {
            if leaf.buffer.len() < 2 * cfg.min_child {
                continue;
            }
            let values: Vec<f64> = leaf.buffer.iter().map(|t| self.sample_value(t)).collect();
            let var_parent = population_variance(&values);
            if var_parent <= 0.0 {
                continue;
            }
            let min_split = cfg.min_split_fraction * var_parent;
            let mut best: Option<(usize, f64, f64)> = None;
            for feature in 0..self.feature_count {
                let column: Vec<f64> = leaf
                    .buffer
                    .iter()
                    .map(|t| t.obs.values()[feature])
                    .collect();
                for threshold in candidate_thresholds(&column, cfg.candidates_per_feature) {
                    let (mut lv, mut rv): (Vec<f64>, Vec<f64>) = (vec![], vec![]);
                    for (t, &v) in leaf.buffer.iter().zip(&values) {
                        if t.obs.values()[feature] < threshold {
                            lv.push(v);
                        } else {
                            rv.push(v);
                        }
                    }
                    if lv.len() < cfg.min_child || rv.len() < cfg.min_child {
                        continue;
                    }
                    let n = values.len() as f64;
                    let weighted = (lv.len() as f64 / n) * population_variance(&lv)
                        + (rv.len() as f64 / n) * population_variance(&rv);
                    let reduction = var_parent - weighted;
                    if reduction <= 0.0 || reduction < min_split {
                        continue;
                    }
                    match best {
                        Some((_, _, b)) if reduction <= b => {}
                        _ => best = Some((feature, threshold, reduction)),
                    }
                }
            }
            if let Some((feature, threshold, _)) = best {
                decisions.push(Decision {
                    leaf_id: leaf.id,
                    feature,
                    threshold,
                });
            }
        }

        if decisions.is_empty() {
            return;
        }
        let budget = self.config.max_leaves.saturating_sub(self.leaf_count());
        let actions = self.action_count;
        let mut applied = false;
        for d in decisions.into_iter().take(budget) {
            apply_split(
                &mut self.root,
                d.leaf_id,
                d.feature,
                d.threshold,
                &mut self.next_leaf_id,
                actions,
            );
            applied = true;
        }
        if applied {
            self.rebuild_stats();
            self.refresh_q();
        }
    }

    /// Largest change produced by one extra synchronous value-iteration
    /// sweep over the current MDP (fixed-point residual).
    pub fn fixed_point_residual(&self) -> f64 {
        let mdp = self.to_leaf_mdp();
        if mdp.is_empty() {
            return 0.0;
        }
        let mut current = Vec::new();
        self.root.for_each_leaf(&mut |leaf| current.push(leaf.q.clone()));
        let index_of: std::collections::BTreeMap<u64, usize> = mdp
            .leaf_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let mut residual: f64 = 0.0;
        for (s, per_action) in mdp.stats.iter().enumerate() {
            for (a, stats) in per_action.iter().enumerate() {
                let Some(stats) = stats else { continue };
                if stats.count == 0 {
                    continue;
                }
                let mut value = 0.0;
                for (to, p, r) in stats.normalized() {
                    let bootstrap = match to {
                        None => 0.0,
                        Some(id) => current[index_of[&id]]
                            .iter()
                            .copied()
                            .fold(f64::NEG_INFINITY, f64::max),
                    };
                    value += p * (r + self.config.gamma * bootstrap);
                }
                residual = residual.max((value - current[s][a]).abs());
            }
        }
        residual
    }
}

fn apply_split(
    node: &mut CutNode,
    leaf_id: u64,
    feature: usize,
    threshold: f64,
    next_id: &mut u64,
    actions: usize,
) -> bool {
    match node {
        CutNode::Internal { left, right, .. } => {
            apply_split(left, leaf_id, feature, threshold, next_id, actions)
                || apply_split(right, leaf_id, feature, threshold, next_id, actions)
        }
        CutNode::Leaf(leaf) if leaf.id == leaf_id => {
            let mut l = CutLeaf::new(*next_id, actions);
            let mut r = CutLeaf::new(*next_id + 1, actions);
            *next_id += 2;
            l.q = leaf.q.clone();
            r.q = leaf.q.clone();
            for t in leaf.buffer.drain(..) {
                if t.obs.values()[feature] < threshold {
                    l.buffer.push_back(t);
                } else {
                    r.buffer.push_back(t);
                }
            }
            *node = CutNode::Internal {
                feature,
                threshold,
                left: Box::new(CutNode::Leaf(l)),
                right: Box::new(CutNode::Leaf(r)),
            };
            true
        }
        CutNode::Leaf(_) => false,
    }
}

impl QSource for CutTree {
    fn q_vector(&self, obs: &Observation) -> Result<QVector> {
        QVector::new(self.q_of(obs)?.q.clone())
    }
}

/// Learns a CUT by direct epsilon-greedy interaction over `budget`
/// transitions, alternating gathering with periodic splitting phases.
pub fn cut_learn(
    env: &mut dyn Environment,
    config: CutConfig,
    seed: u64,
    budget: usize,
) -> Result<CutTree> {
    let spec = env.spec().clone();
    let mut tree = CutTree::new(spec.feature_count, spec.action_count, config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episode = 0u64;
    let mut obs = env.reset(seed);
    for step_idx in 0..budget {
        let eps = epsilon_at(
            step_idx,
            budget,
            tree.config.epsilon_start,
            tree.config.epsilon_final,
        );
        let action = if rng.random::<f64>() < eps {
            rng.random_range(0..spec.action_count)
        } else {
            let q = &tree.root.leaf_for(&obs).q;
            let mut best = 0;
            for (i, &v) in q.iter().enumerate().skip(1) {
                if v > q[best] {
                    best = i;
                }
            }
            best
        };
        let step = env.step(ActionId(action))?;
        tree.gather(RawTransition {
            obs: obs.clone(),
            action,
            reward: step.reward,
            next_obs: step.next_obs.clone(),
            done: step.done,
        });
        if (step_idx + 1) % tree.config.split_period == 0 {
            tree.split_phase();
        }
        if step.done {
            episode += 1;
            obs = env.reset(seed + episode);
        } else {
            obs = step.next_obs;
        }
    }
    tree.refresh_q();
    Ok(tree)
}

// Serialization mirrors the LMUT node schema with per-action MDP payloads.

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CutNodeRepr {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<CutNodeRepr>,
        right: Box<CutNodeRepr>,
    },
    Leaf {
        id: u64,
        q: Vec<f64>,
        mdp: Vec<MdpStats>,
    },
}

impl CutNodeRepr {
    fn from_node(node: &CutNode) -> CutNodeRepr {
        match node {
            CutNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => CutNodeRepr::Internal {
                feature: *feature,
                threshold: *threshold,
                left: Box::new(CutNodeRepr::from_node(left)),
                right: Box::new(CutNodeRepr::from_node(right)),
            },
            CutNode::Leaf(leaf) => CutNodeRepr::Leaf {
                id: leaf.id,
                q: leaf.q.clone(),
                mdp: leaf.stats.clone(),
            },
        }
    }

    fn into_node(self) -> CutNode {
        match self {
            CutNodeRepr::Internal {
                feature,
                threshold,
                left,
                right,
            } => CutNode::Internal {
                feature,
                threshold,
                left: Box::new(left.into_node()),
                right: Box::new(right.into_node()),
            },
            CutNodeRepr::Leaf { id, q, mdp } => {
                let mut leaf = CutLeaf::new(id, mdp.len());
                leaf.q = q;
                leaf.stats = mdp;
                CutNode::Leaf(leaf)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct CutTreeRepr {
    feature_count: usize,
    action_count: usize,
    config: CutConfig,
    root: CutNodeRepr,
}

impl CutTree {
    pub fn to_json(&self) -> Result<String> {
        let repr = CutTreeRepr {
            feature_count: self.feature_count,
            action_count: self.action_count,
            config: self.config.clone(),
            root: CutNodeRepr::from_node(&self.root),
        };
        Ok(serde_json::to_string(&repr)?)
    }

    pub fn from_json(json: &str) -> Result<CutTree> {
        let repr: CutTreeRepr = serde_json::from_str(json)?;
        let root = repr.root.into_node();
        let mut max_id = 0;
        root.for_each_leaf(&mut |l| max_id = max_id.max(l.id));
        Ok(CutTree {
            feature_count: repr.feature_count,
            action_count: repr.action_count,
            config: repr.config,
            root,
            next_leaf_id: max_id + 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvSpec, StepResult};

    /// A six-cell corridor: one feature (the position), move left/right,
    /// reward 1 only on reaching the right end (terminal).
    struct Corridor {
        spec: EnvSpec,
        pos: i32,
        active: bool,
    }

    impl Corridor {
        fn new() -> Self {
            Corridor {
                spec: EnvSpec {
                    name: "corridor".to_string(),
                    feature_count: 1,
                    action_count: 2,
                    episode_cap: 50,
                },
                pos: 0,
                active: false,
            }
        }
    }

    impl Environment for Corridor {
        fn spec(&self) -> &EnvSpec {
            &self.spec
        }

        fn reset(&mut self, seed: u64) -> Observation {
            self.pos = (seed % 3) as i32; // start near the left end
            self.active = true;
            Observation::new(vec![self.pos as f64]).unwrap()
        }

        fn step(&mut self, action: ActionId) -> Result<StepResult> {
            if !self.active {
                return Err(Error::usage("corridor episode finished"));
            }
            self.pos = if action.index() == 1 {
                (self.pos + 1).min(5)
            } else {
                (self.pos - 1).max(0)
            };
            let done = self.pos == 5;
            let reward = if done { 1.0 } else { 0.0 };
            if done {
                self.active = false;
            }
            Ok(StepResult {
                next_obs: Observation::new(vec![self.pos as f64]).unwrap(),
                reward,
                done,
            })
        }
    }

    #[test]
    fn corridor_policy_moves_right_everywhere() {
        let mut env = Corridor::new();
        let config = CutConfig {
            gamma: 0.9,
            min_child: 4,
            min_split_fraction: 0.01,
            max_leaves: 16,
            ..CutConfig::default()
        };
        let tree = cut_learn(&mut env, config, 3, 4000).unwrap();
        assert!(tree.leaf_count() >= 2, "corridor never discretized");
        for pos in 0..5 {
            let obs = Observation::new(vec![pos as f64]).unwrap();
            let q = tree.q_vector(&obs).unwrap();
            assert_eq!(
                q.greedy(),
                ActionId(1),
                "position {pos} prefers {q:?}"
            );
        }
    }

    #[test]
    fn no_split_budget_gives_single_leaf_self_loop() {
        let mut env = Corridor::new();
        let config = CutConfig {
            gamma: 0.5,
            split_period: 1000, // never reached within the budget
            ..CutConfig::default()
        };
        let tree = cut_learn(&mut env, config, 1, 30).unwrap();
        assert_eq!(tree.leaf_count(), 1);
        // Q solves the one-state MDP built from the gathered stats.
        assert!(tree.fixed_point_residual() < 1e-6);
    }

    #[test]
    fn q_estimates_are_a_fixed_point() {
        let mut env = Corridor::new();
        let tree = cut_learn(
            &mut env,
            CutConfig {
                gamma: 0.9,
                min_child: 4,
                max_leaves: 16,
                ..CutConfig::default()
            },
            7,
            2000,
        )
        .unwrap();
        assert!(
            tree.fixed_point_residual() < 1e-6,
            "residual {}",
            tree.fixed_point_residual()
        );
    }

    #[test]
    fn json_round_trip_preserves_q() {
        let mut env = Corridor::new();
        let tree = cut_learn(&mut env, CutConfig::default(), 5, 500).unwrap();
        let json = tree.to_json().unwrap();
        let back = CutTree::from_json(&json).unwrap();
        for pos in 0..6 {
            let obs = Observation::new(vec![pos as f64]).unwrap();
            assert_eq!(
                tree.q_vector(&obs).unwrap(),
                back.q_vector(&obs).unwrap()
            );
        }
    }
}
