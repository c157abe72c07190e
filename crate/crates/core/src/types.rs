//! Shared domain types: observations, actions, transitions and Q-vectors.
//!
//! All values are double precision. Observations and Q-vectors reject
//! NaN/Inf at construction so downstream code can assume finite inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-length vector of continuous features describing one state.
///
/// Discrete features are expected one-hot encoded; pixel inputs arrive as
/// flattened binary frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(Observation(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Observation {
    type Error = String;

    fn try_from(values: Vec<f64>) -> std::result::Result<Self, String> {
        Observation::new(values).map_err(|e| e.to_string())
    }
}

impl From<Observation> for Vec<f64> {
    fn from(obs: Observation) -> Vec<f64> {
        obs.0
    }
}

/// Index into an environment's discrete action set.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One labelled unit of mimic training data.
///
/// `q_hat` is the teacher's soft output for `(obs, action)` at recording
/// time; `done` marks the episode-terminal step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub obs: Observation,
    pub action: ActionId,
    pub reward: f64,
    pub next_obs: Observation,
    pub q_hat: f64,
    pub done: bool,
}

impl TransitionRecord {
    pub fn new(
        obs: Observation,
        action: ActionId,
        reward: f64,
        next_obs: Observation,
        q_hat: f64,
        done: bool,
    ) -> Result<Self> {
        if !q_hat.is_finite() {
            return Err(Error::NonFinite("q_hat"));
        }
        if !reward.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        if obs.len() != next_obs.len() {
            return Err(Error::DimensionMismatch {
                expected: obs.len(),
                got: next_obs.len(),
            });
        }
        Ok(TransitionRecord {
            obs,
            action,
            reward,
            next_obs,
            q_hat,
            done,
        })
    }
}

/// Per-action Q-value vector used for greedy control and rule reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QVector(Vec<f64>);

impl QVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("q-vector"));
        }
        Ok(QVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Greedy action: argmax with ties broken toward the lowest index.
    pub fn greedy(&self) -> ActionId {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        ActionId(best)
    }
}

impl TryFrom<Vec<f64>> for QVector {
    type Error = String;

    fn try_from(values: Vec<f64>) -> std::result::Result<Self, String> {
        QVector::new(values).map_err(|e| e.to_string())
    }
}

impl From<QVector> for Vec<f64> {
    fn from(q: QVector) -> Vec<f64> {
        q.0
    }
}
