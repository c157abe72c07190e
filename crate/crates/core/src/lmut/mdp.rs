//! Per-leaf MDP statistics and value iteration over the leaf space.
//!
//! Counts, transition probabilities, rewards and average Q values follow
//! the update-then-increment order: probabilities and running means are
//! refreshed from the pre-increment counts, then both counts advance.
//! Stored P rows deliberately do not sum to one; value iteration consumes
//! the normalized accessor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tree::LeafId;

/// Transition statistics toward one successor leaf.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SuccessorStats {
    pub count: u64,
    /// As-written transition probability (count+1)/(total+1) at the last
    /// update instant.
    pub p: f64,
    /// Running mean reward of transitions into this successor.
    pub r: f64,
}

/// Statistics for one (leaf state, action) pair. A `None` successor key
/// marks episode-terminal transitions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MdpStats {
    pub count: u64,
    pub q_avg: f64,
    #[serde(with = "successor_entries")]
    pub successors: BTreeMap<Option<LeafId>, SuccessorStats>,
}

/// JSON form of the successor map: a list of entries, `to: null` marking
/// episode-terminal transitions.
mod successor_entries {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        to: Option<LeafId>,
        count: u64,
        p: f64,
        r: f64,
    }

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<Option<LeafId>, SuccessorStats>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = map
            .iter()
            .map(|(&to, s)| Entry {
                to,
                count: s.count,
                p: s.p,
                r: s.r,
            })
            .collect();
        serde::Serialize::serialize(&entries, ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<Option<LeafId>, SuccessorStats>, D::Error> {
        let entries: Vec<Entry> = serde::Deserialize::deserialize(de)?;
        Ok(entries
            .into_iter()
            .map(|e| {
                (
                    e.to,
                    SuccessorStats {
                        count: e.count,
                        p: e.p,
                        r: e.r,
                    },
                )
            })
            .collect())
    }
}

impl MdpStats {
    /// Applies one observed transition.
    pub fn record(&mut self, successor: Option<LeafId>, reward: f64, q_hat: f64) {
        let total: u64 = self.successors.values().map(|s| s.count).sum();
        let entry = self.successors.entry(successor).or_default();
        entry.p = (entry.count + 1) as f64 / (total + 1) as f64;
        entry.r = (entry.r * entry.count as f64 + reward) / (entry.count + 1) as f64;
        self.q_avg = (self.q_avg * self.count as f64 + q_hat) / (self.count + 1) as f64;
        entry.count += 1;
        self.count += 1;
    }

    /// Successor distribution renormalized to sum to one.
    pub fn normalized(&self) -> Vec<(Option<LeafId>, f64, f64)> {
        let total: f64 = self.successors.values().map(|s| s.p).sum();
        self.successors
            .iter()
            .map(|(&to, s)| (to, s.p / total, s.r))
            .collect()
    }
}

/// A materialized leaf-space MDP: `stats[state][action]`, states indexed
/// densely with their leaf ids recorded alongside.
#[derive(Debug, Clone)]
pub struct LeafMdp {
    pub leaf_ids: Vec<LeafId>,
    pub stats: Vec<Vec<Option<MdpStats>>>,
}

impl LeafMdp {
    pub fn state_count(&self) -> usize {
        self.leaf_ids.len()
    }

    pub fn action_count(&self) -> usize {
        self.stats.first().map(|a| a.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.stats
            .iter()
            .flatten()
            .all(|s| s.as_ref().map(|m| m.count == 0).unwrap_or(true))
    }

    /// Jacobi value iteration of
    /// Q(s,a) = sum_s' P~(s,a,s') [R(s,a,s') + gamma * max_a' Q(s',a')]
    /// until the largest update falls below `tol` or `max_sweeps` pass.
    /// Synchronous sweeps make the result independent of state order.
    pub fn value_iteration(&self, gamma: f64, tol: f64, max_sweeps: usize) -> Vec<Vec<f64>> {
        let index_of: BTreeMap<LeafId, usize> = self
            .leaf_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let actions = self.action_count();
        let mut q = vec![vec![0.0; actions]; self.state_count()];
        for _ in 0..max_sweeps {
            let mut next = vec![vec![0.0; actions]; self.state_count()];
            let mut max_change: f64 = 0.0;
            for (s, per_action) in self.stats.iter().enumerate() {
                for (a, stats) in per_action.iter().enumerate() {
                    let Some(stats) = stats else { continue };
                    if stats.count == 0 {
                        continue;
                    }
                    let mut value = 0.0;
                    for (to, p, r) in stats.normalized() {
                        let bootstrap = match to {
                            None => 0.0,
                            Some(id) => {
                                let idx = index_of[&id];
                                q[idx].iter().copied().fold(f64::NEG_INFINITY, f64::max)
                            }
                        };
                        value += p * (r + gamma * bootstrap);
                    }
                    max_change = max_change.max((value - q[s][a]).abs());
                    next[s][a] = value;
                }
            }
            q = next;
            if max_change < tol {
                break;
            }
        }
        q
    }
}
