//! Mimic learning for reinforcement-learning Q-functions.
//!
//! A teacher Q-function (tile-coded tabular or a small DQN) is trained on
//! a simulated environment, then distilled into transparent tree models:
//! linear model U-trees learned online from streaming transitions, plus
//! batch CART and direct-RL continuous U-tree baselines. Evaluation covers
//! regression fidelity against the teacher and game-play performance, and
//! the trained trees support interpretation through feature influence,
//! rule extraction and super-pixel highlighting.

pub mod baselines;
pub mod cell;
pub mod datagen;
pub mod envs;
pub mod error;
pub mod eval;
pub mod interpret;
pub mod io;
pub mod lmut;
pub mod teacher;
pub mod types;

pub use cell::{Interval, PartitionCell};
pub use error::{Error, Result};
pub use types::{ActionId, Observation, QVector, TransitionRecord};
