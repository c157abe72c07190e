//! Tile-coded tabular Q-learning for low-dimensional environments.
//!
//! Each of `tilings` overlapping grids discretizes the normalized state
//! into `bins` cells per dimension (offset by a fraction of a cell per
//! tiling); Q(s, a) is the sum of one table entry per tiling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Observation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileConfig {
    pub tilings: usize,
    pub bins: usize,
    /// Total learning rate; each tiling receives alpha / tilings.
    pub alpha: f64,
    pub gamma: f64,
    pub episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    /// Greedy ARPE the trained teacher must reach over the evaluation episodes.
    pub arpe_threshold: f64,
    pub eval_episodes: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            tilings: 8,
            bins: 8,
            alpha: 0.5,
            gamma: 0.99,
            episodes: 2000,
            epsilon_start: 1.0,
            epsilon_final: 0.05,
            arpe_threshold: f64::NEG_INFINITY,
            eval_episodes: 100,
        }
    }
}

/// The learned tile table plus everything needed to index it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileTable {
    pub tilings: usize,
    pub bins: usize,
    pub bounds: Vec<(f64, f64)>,
    pub action_count: usize,
    /// Flattened as [action][tiling][cell].
    pub weights: Vec<f64>,
}

impl TileTable {
    pub fn new(tilings: usize, bins: usize, bounds: Vec<(f64, f64)>, action_count: usize) -> Self {
        let cells = (bins + 1).pow(bounds.len() as u32);
        TileTable {
            tilings,
            bins,
            bounds,
            action_count,
            weights: vec![0.0; action_count * tilings * cells],
        }
    }

    fn cells_per_tiling(&self) -> usize {
        (self.bins + 1).pow(self.bounds.len() as u32)
    }

    /// Flat table index of the active cell in `tiling` for `obs`.
    fn cell_index(&self, obs: &Observation, tiling: usize) -> usize {
        let offset = tiling as f64 / self.tilings as f64;
        let mut idx = 0;
        let mut stride = 1;
        for (&v, &(lo, hi)) in obs.values().iter().zip(&self.bounds) {
            let norm = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            let bin = ((norm * self.bins as f64 + offset).floor() as usize).min(self.bins);
            idx += bin * stride;
            stride *= self.bins + 1;
        }
        idx
    }

    fn check_dims(&self, obs: &Observation) -> Result<()> {
        if obs.len() != self.bounds.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bounds.len(),
                got: obs.len(),
            });
        }
        Ok(())
    }

    pub fn q(&self, obs: &Observation, action: usize) -> Result<f64> {
        self.check_dims(obs)?;
        let cells = self.cells_per_tiling();
        let base = action * self.tilings * cells;
        let mut sum = 0.0;
        for t in 0..self.tilings {
            sum += self.weights[base + t * cells + self.cell_index(obs, t)];
        }
        Ok(sum)
    }

    /// One temporal-difference update: moves Q(obs, action) toward `target`
    /// by `alpha`, spread evenly over the tilings.
    pub fn td_update(&mut self, obs: &Observation, action: usize, target: f64, alpha: f64) {
        let delta = target - self.q(obs, action).expect("dims checked by caller");
        let cells = self.cells_per_tiling();
        let base = action * self.tilings * cells;
        let per_tiling = alpha / self.tilings as f64;
        for t in 0..self.tilings {
            let idx = base + t * cells + self.cell_index(obs, t);
            self.weights[idx] += per_tiling * delta;
        }
    }
}
