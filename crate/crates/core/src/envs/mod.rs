//! Deterministic-step simulated environments.
//!
//! Three tasks: Mountain Car and Cart Pole (low-dimensional control) and
//! MiniBird, a 16x16 pixel side-scroller with stacked binary frames. A
//! `(seed, action sequence)` pair uniquely determines the full trajectory.
//! Every environment caps episodes at 200 steps and forces `done` there.

mod cart_pole;
mod mini_bird;
mod mountain_car;

pub use cart_pole::CartPole;
pub use mini_bird::{FrameGeometry, MiniBird};
pub use mountain_car::MountainCar;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ActionId, Observation};

pub const EPISODE_CAP: usize = 200;

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub feature_count: usize,
    pub action_count: usize,
    pub episode_cap: usize,
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_obs: Observation,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode; identical seeds give identical trajectories
    /// under identical actions.
    fn reset(&mut self, seed: u64) -> Observation;

    /// Advances one step. Stepping a finished (or never started) episode
    /// is a usage error.
    fn step(&mut self, action: ActionId) -> Result<StepResult>;

    /// Per-feature value ranges for coarse coding, when meaningful.
    fn tile_bounds(&self) -> Option<&[(f64, f64)]> {
        None
    }

    /// Pixel layout for frame-stacked observations, when the observation
    /// is an image stack.
    fn frame_geometry(&self) -> Option<FrameGeometry> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    MountainCar,
    CartPole,
    MiniBird,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::MountainCar, EnvKind::CartPole, EnvKind::MiniBird];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::MountainCar => "mountain-car",
            EnvKind::CartPole => "cart-pole",
            EnvKind::MiniBird => "mini-bird",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mountain-car" => Ok(EnvKind::MountainCar),
            "cart-pole" => Ok(EnvKind::CartPole),
            "mini-bird" => Ok(EnvKind::MiniBird),
            other => Err(Error::usage(format!(
                "unknown environment '{other}' (expected mountain-car, cart-pole or mini-bird)"
            ))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn make_env(kind: EnvKind) -> Box<dyn Environment> {
    match kind {
        EnvKind::MountainCar => Box::new(MountainCar::new()),
        EnvKind::CartPole => Box::new(CartPole::new()),
        EnvKind::MiniBird => Box::new(MiniBird::new()),
    }
}

/// Shared episode bookkeeping: step counting and the cap-forced terminal.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeClock {
    steps: usize,
    active: bool,
}

impl EpisodeClock {
    pub fn start(&mut self) {
        self.steps = 0;
        self.active = true;
    }

    pub fn check_active(&self) -> Result<()> {
        if !self.active {
            return Err(Error::usage(
                "step called on a finished episode; call reset first",
            ));
        }
        Ok(())
    }

    /// Counts one step; returns true when the cap is reached.
    pub fn tick(&mut self, cap: usize) -> bool {
        self.steps += 1;
        self.steps >= cap
    }

    pub fn finish(&mut self) {
        self.active = false;
    }
}
