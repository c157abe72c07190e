//! MiniBird: a 16x16 pixel side-scroller with flap-or-fall control.
//!
//! The bird sits at a fixed column while pipe columns scroll left one
//! cell per step. Pipes spawn every eight columns with a four-cell gap at
//! a seeded random height. Gravity pulls one row per step, flapping sets
//! the velocity to -2 (upward). The observation is the four most recent
//! frames, most recent first, flattened to 1024 binary features.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvSpec, Environment, EpisodeClock, StepResult, EPISODE_CAP};
use crate::error::{Error, Result};
use crate::types::{ActionId, Observation};

pub const GRID: usize = 16;
pub const FRAMES: usize = 4;
pub const BIRD_COL: i32 = 3;
const GAP_CELLS: i32 = 4;
const SPAWN_PERIOD: u32 = 8;
const FLAP_VELOCITY: i32 = -2;
const MAX_FALL: i32 = 3;

/// Pixel layout of a frame-stacked observation: flat index =
/// `frame * rows * cols + row * cols + col`, frame 0 most recent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
}

impl FrameGeometry {
    pub fn feature_count(&self) -> usize {
        self.frames * self.rows * self.cols
    }

    /// Maps a flat feature index back to (frame, row, col).
    pub fn locate(&self, index: usize) -> (usize, usize, usize) {
        let per_frame = self.rows * self.cols;
        let frame = index / per_frame;
        let rem = index % per_frame;
        (frame, rem / self.cols, rem % self.cols)
    }
}

#[derive(Debug, Clone, Copy)]
struct Pipe {
    x: i32,
    gap_top: i32, // rows gap_top .. gap_top + GAP_CELLS are open
}

/// Actions: 0 glide, 1 flap. Reward +1 per step taken; the episode ends
/// on collision (grid exit or pipe hit) or at the step cap.
pub struct MiniBird {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    bird_row: i32,
    velocity: i32,
    pipes: Vec<Pipe>,
    ticks_to_spawn: u32,
    frames: Vec<Vec<f64>>, // most recent first
    clock: EpisodeClock,
}

impl MiniBird {
    pub fn new() -> Self {
        MiniBird {
            spec: EnvSpec {
                name: "mini-bird".to_string(),
                feature_count: FRAMES * GRID * GRID,
                action_count: 2,
                episode_cap: EPISODE_CAP,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            bird_row: 0,
            velocity: 0,
            pipes: Vec::new(),
            ticks_to_spawn: 0,
            frames: Vec::new(),
            clock: EpisodeClock::default(),
        }
    }

    pub const fn geometry() -> FrameGeometry {
        FrameGeometry {
            frames: FRAMES,
            rows: GRID,
            cols: GRID,
        }
    }

    fn render(&self) -> Vec<f64> {
        let mut frame = vec![0.0; GRID * GRID];
        for pipe in &self.pipes {
            if (0..GRID as i32).contains(&pipe.x) {
                for row in 0..GRID as i32 {
                    if row < pipe.gap_top || row >= pipe.gap_top + GAP_CELLS {
                        frame[row as usize * GRID + pipe.x as usize] = 1.0;
                    }
                }
            }
        }
        if (0..GRID as i32).contains(&self.bird_row) {
            frame[self.bird_row as usize * GRID + BIRD_COL as usize] = 1.0;
        }
        frame
    }

    fn push_frame(&mut self, frame: Vec<f64>) {
        self.frames.insert(0, frame);
        self.frames.truncate(FRAMES);
    }

    fn observe(&self) -> Observation {
        let mut values = Vec::with_capacity(self.spec.feature_count);
        for frame in &self.frames {
            values.extend_from_slice(frame);
        }
        Observation::new(values).expect("binary frames are finite")
    }

    fn collided(&self) -> bool {
        if !(0..GRID as i32).contains(&self.bird_row) {
            return true;
        }
        self.pipes.iter().any(|p| {
            p.x == BIRD_COL && (self.bird_row < p.gap_top || self.bird_row >= p.gap_top + GAP_CELLS)
        })
    }
}

impl Default for MiniBird {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for MiniBird {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.bird_row = (GRID / 2) as i32;
        self.velocity = 0;
        self.pipes.clear();
        // First pipe enters on the first step, then one every SPAWN_PERIOD.
        self.ticks_to_spawn = 1;
        let first = self.render();
        self.frames = vec![first; FRAMES];
        self.clock.start();
        self.observe()
    }

    fn step(&mut self, action: ActionId) -> Result<StepResult> {
        self.clock.check_active()?;
        if action.index() >= self.spec.action_count {
            return Err(Error::usage(format!("invalid action {}", action.index())));
        }

        self.velocity = if action.index() == 1 {
            FLAP_VELOCITY
        } else {
            (self.velocity + 1).min(MAX_FALL)
        };
        self.bird_row += self.velocity;

        for pipe in &mut self.pipes {
            pipe.x -= 1;
        }
        self.pipes.retain(|p| p.x >= 0);

        self.ticks_to_spawn -= 1;
        if self.ticks_to_spawn == 0 {
            let gap_top = self.rng.random_range(1..=(GRID as i32 - GAP_CELLS - 1));
            self.pipes.push(Pipe {
                x: GRID as i32 - 1,
                gap_top,
            });
            self.ticks_to_spawn = SPAWN_PERIOD;
        }

        let capped = self.clock.tick(self.spec.episode_cap);
        let done = self.collided() || capped;
        if done {
            self.clock.finish();
        }

        let frame = self.render();
        self.push_frame(frame);
        Ok(StepResult {
            next_obs: self.observe(),
            reward: 1.0,
            done,
        })
    }

    fn frame_geometry(&self) -> Option<FrameGeometry> {
        Some(Self::geometry())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_is_binary_and_sized() {
        let mut env = MiniBird::new();
        let obs = env.reset(1);
        assert_eq!(obs.len(), 1024);
        for _ in 0..30 {
            let r = env.step(ActionId(0)).unwrap();
            assert!(r.next_obs.values().iter().all(|&v| v == 0.0 || v == 1.0));
            if r.done {
                break;
            }
        }
    }

    #[test]
    fn bottom_row_fall_collides() {
        let mut env = MiniBird::new();
        env.reset(2);
        env.bird_row = (GRID - 1) as i32;
        env.velocity = 1; // moving down
        let r = env.step(ActionId(0)).unwrap();
        assert!(r.done);
    }

    #[test]
    fn flap_moves_bird_up_two_rows() {
        let mut env = MiniBird::new();
        env.reset(3);
        let start = env.bird_row;
        env.step(ActionId(1)).unwrap();
        assert_eq!(env.bird_row, start - 2);
    }

    #[test]
    fn frames_shift_most_recent_first() {
        let mut env = MiniBird::new();
        env.reset(4);
        let r1 = env.step(ActionId(1)).unwrap();
        let r2 = env.step(ActionId(0)).unwrap();
        let frame_len = GRID * GRID;
        // Frame 1 of the newer observation equals frame 0 of the older one.
        assert_eq!(
            &r2.next_obs.values()[frame_len..2 * frame_len],
            &r1.next_obs.values()[..frame_len],
        );
    }

    #[test]
    fn pipes_appear_and_scroll() {
        let mut env = MiniBird::new();
        env.reset(5);
        env.step(ActionId(0)).unwrap();
        assert_eq!(env.pipes.len(), 1);
        assert_eq!(env.pipes[0].x, GRID as i32 - 1);
        let x0 = env.pipes[0].x;
        env.step(ActionId(1)).unwrap();
        assert_eq!(env.pipes[0].x, x0 - 1);
    }

    #[test]
    fn geometry_roundtrip() {
        let g = MiniBird::geometry();
        assert_eq!(g.feature_count(), 1024);
        assert_eq!(g.locate(0), (0, 0, 0));
        assert_eq!(g.locate(256), (1, 0, 0));
        assert_eq!(g.locate(256 + 16 * 5 + 7), (1, 5, 7));
    }
}
