//! Cart Pole: balance a pole on a force-controlled cart.
//!
//! Standard pole-on-cart physics with Euler integration at dt = 0.02.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EnvSpec, Environment, EpisodeClock, StepResult, EPISODE_CAP};
use crate::error::{Error, Result};
use crate::types::{ActionId, Observation};

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;

const BOUNDS: [(f64, f64); 4] = [
    (-X_LIMIT, X_LIMIT),
    (-3.0, 3.0),
    (-THETA_LIMIT, THETA_LIMIT),
    (-3.5, 3.5),
];

/// Actions: 0 push left, 1 push right. Reward +1 per step; the episode
/// ends when the pole or cart leaves its limits, or at the step cap.
pub struct CartPole {
    spec: EnvSpec,
    state: [f64; 4], // x, x_dot, theta, theta_dot
    clock: EpisodeClock,
}

impl CartPole {
    pub fn new() -> Self {
        CartPole {
            spec: EnvSpec {
                name: "cart-pole".to_string(),
                feature_count: 4,
                action_count: 2,
                episode_cap: EPISODE_CAP,
            },
            state: [0.0; 4],
            clock: EpisodeClock::default(),
        }
    }

    fn observe(&self) -> Observation {
        Observation::new(self.state.to_vec()).expect("finite state")
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut self.state {
            *v = rng.random_range(-0.05..0.05);
        }
        self.clock.start();
        self.observe()
    }

    fn step(&mut self, action: ActionId) -> Result<StepResult> {
        self.clock.check_active()?;
        if action.index() >= self.spec.action_count {
            return Err(Error::usage(format!("invalid action {}", action.index())));
        }
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action.index() == 1 {
            FORCE_MAG
        } else {
            -FORCE_MAG
        };
        let cos_t = theta.cos();
        let sin_t = theta.sin();

        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin_t) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin_t - cos_t * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos_t * cos_t / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS;

        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];

        let capped = self.clock.tick(self.spec.episode_cap);
        let done = self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT || capped;
        if done {
            self.clock.finish();
        }
        Ok(StepResult {
            next_obs: self.observe(),
            reward: 1.0,
            done,
        })
    }

    fn tile_bounds(&self) -> Option<&[(f64, f64)]> {
        Some(&BOUNDS)
    }
}
