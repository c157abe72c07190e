//! Mountain Car: accelerate an underpowered car out of a valley.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EnvSpec, Environment, EpisodeClock, StepResult, EPISODE_CAP};
use crate::error::{Error, Result};
use crate::types::{ActionId, Observation};

const MIN_POS: f64 = -1.2;
const MAX_POS: f64 = 0.6;
const MAX_SPEED: f64 = 0.07;
const GOAL_POS: f64 = 0.5;
const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;

const BOUNDS: [(f64, f64); 2] = [(MIN_POS, MAX_POS), (-MAX_SPEED, MAX_SPEED)];

/// Actions: 0 push left, 1 no push, 2 push right. Reward -1 per step;
/// the episode ends at the goal position or the step cap.
pub struct MountainCar {
    spec: EnvSpec,
    position: f64,
    velocity: f64,
    clock: EpisodeClock,
}

impl MountainCar {
    pub fn new() -> Self {
        MountainCar {
            spec: EnvSpec {
                name: "mountain-car".to_string(),
                feature_count: 2,
                action_count: 3,
                episode_cap: EPISODE_CAP,
            },
            position: 0.0,
            velocity: 0.0,
            clock: EpisodeClock::default(),
        }
    }

    fn observe(&self) -> Observation {
        Observation::new(vec![self.position, self.velocity]).expect("finite state")
    }
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for MountainCar {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.position = rng.random_range(-0.6..-0.4);
        self.velocity = 0.0;
        self.clock.start();
        self.observe()
    }

    fn step(&mut self, action: ActionId) -> Result<StepResult> {
        self.clock.check_active()?;
        if action.index() >= self.spec.action_count {
            return Err(Error::usage(format!("invalid action {}", action.index())));
        }
        let push = action.index() as f64 - 1.0;
        self.velocity = (self.velocity + FORCE * push
            - GRAVITY * (3.0 * self.position).cos())
        .clamp(-MAX_SPEED, MAX_SPEED);
        self.position = (self.position + self.velocity).clamp(MIN_POS, MAX_POS);

        let capped = self.clock.tick(self.spec.episode_cap);
        let done = self.position >= GOAL_POS || capped;
        if done {
            self.clock.finish();
        }
        Ok(StepResult {
            next_obs: self.observe(),
            reward: -1.0,
            done,
        })
    }

    fn tile_bounds(&self) -> Option<&[(f64, f64)]> {
        Some(&BOUNDS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_range() {
        for seed in 0..20 {
            let mut env = MountainCar::new();
            let obs = env.reset(seed);
            let v = obs.values();
            assert!((-0.6..-0.4).contains(&v[0]), "position {}", v[0]);
            assert_eq!(v[1], 0.0);
        }
    }

    #[test]
    fn no_push_dynamics_formula() {
        // From (x = -0.5, v = 0) with no push: v' = -0.0025 * cos(-1.5).
        let mut env = MountainCar::new();
        env.reset(0);
        env.position = -0.5;
        env.velocity = 0.0;
        let step = env.step(ActionId(1)).unwrap();
        let expect_v = -0.0025 * (-1.5f64).cos();
        let expect_x = -0.5 + expect_v;
        assert_eq!(step.next_obs.values()[1], expect_v);
        assert_eq!(step.next_obs.values()[0], expect_x);
        assert_eq!(step.reward, -1.0);
    }

    #[test]
    fn velocity_and_position_clamped() {
        let mut env = MountainCar::new();
        env.reset(0);
        for _ in 0..EPISODE_CAP {
            let r = env.step(ActionId(0)).unwrap();
            let v = r.next_obs.values();
            assert!(v[0] >= MIN_POS && v[0] <= MAX_POS);
            assert!(v[1].abs() <= MAX_SPEED);
            if r.done {
                break;
            }
        }
    }
}
