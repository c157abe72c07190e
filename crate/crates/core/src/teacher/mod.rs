//! Trainable teacher Q-functions producing the soft labels for mimic
//! learning.
//!
//! Two reference teachers: tile-coded tabular Q-learning for the
//! low-dimensional tasks (trains in seconds, exactly reproducible) and a
//! small fully-connected DQN with replay buffer and target network for
//! pixel input. Both train on temporal-difference targets
//! `r + gamma * max_a Q(s', a)` with terminal states bootstrapping zero,
//! and both must reach a configured greedy ARPE to count as trained.

mod mlp;
mod tile;

pub use mlp::{MlpGradients, MlpNet};
pub use tile::{TileConfig, TileTable};

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{make_env, EnvKind, Environment};
use crate::error::{Error, Result};
use crate::eval::{play_eval, QSource};
use crate::types::{ActionId, Observation, QVector};

/// One state-action visit logged during teacher training, before labelling.
#[derive(Debug, Clone)]
pub struct Visit {
    pub obs: Observation,
    pub action: ActionId,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
}

/// Hyperparameters for the fully-connected DQN teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    /// SGD step size applied to the minibatch-mean gradient.
    pub alpha: f64,
    pub replay_capacity: usize,
    pub minibatch: usize,
    pub target_refresh: usize,
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    pub gamma: f64,
    pub episodes: usize,
    /// Run one SGD update every this many environment steps.
    pub train_every: usize,
    /// Minimum replay size before updates begin.
    pub warmup: usize,
    pub arpe_threshold: f64,
    pub eval_episodes: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![64, 32],
            alpha: 1e-3,
            replay_capacity: 10_000,
            minibatch: 32,
            target_refresh: 500,
            epsilon_start: 1.0,
            epsilon_final: 0.05,
            gamma: 0.99,
            episodes: 600,
            train_every: 4,
            warmup: 500,
            arpe_threshold: f64::NEG_INFINITY,
            eval_episodes: 100,
        }
    }
}

/// Which teacher to train, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "teacher", rename_all = "kebab-case")]
pub enum TeacherConfig {
    Tile(TileConfig),
    Dqn(DqnConfig),
}

impl TeacherConfig {
    /// Defaults tuned per environment; thresholds follow the trained-teacher
    /// bars for the two classic control tasks.
    pub fn default_for(env: EnvKind) -> TeacherConfig {
        match env {
            // Q = 0 is optimistic under -1 rewards, so near-greedy
            // exploration finds the goal far more reliably than heavy
            // epsilon randomization here.
            EnvKind::MountainCar => TeacherConfig::Tile(TileConfig {
                episodes: 4000,
                alpha: 0.3,
                epsilon_start: 0.3,
                epsilon_final: 0.0,
                arpe_threshold: -160.0,
                ..TileConfig::default()
            }),
            EnvKind::CartPole => TeacherConfig::Tile(TileConfig {
                episodes: 4000,
                alpha: 0.5,
                arpe_threshold: 150.0,
                ..TileConfig::default()
            }),
            EnvKind::MiniBird => TeacherConfig::Dqn(DqnConfig {
                arpe_threshold: 25.0,
                ..DqnConfig::default()
            }),
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            TeacherConfig::Tile(c) => c.gamma,
            TeacherConfig::Dqn(c) => c.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TeacherParams {
    TabularTile(TileTable),
    MlpDqn {
        net: MlpNet,
        /// Per-feature (lo, hi) ranges mapped linearly onto [-1, 1] before
        /// the forward pass; None for inputs that are already unit scale
        /// (binary pixels).
        input_bounds: Option<Vec<(f64, f64)>>,
    },
}

/// Linear map of each feature's (lo, hi) range onto [-1, 1].
fn normalize_input(values: &[f64], bounds: &Option<Vec<(f64, f64)>>) -> Vec<f64> {
    match bounds {
        None => values.to_vec(),
        Some(b) => values
            .iter()
            .zip(b)
            .map(|(&v, &(lo, hi))| (2.0 * v - lo - hi) / (hi - lo))
            .collect(),
    }
}

/// A (possibly trained) teacher; queries are pure once `trained` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherModel {
    pub env: EnvKind,
    pub gamma: f64,
    pub trained: bool,
    #[serde(flatten)]
    pub params: TeacherParams,
}

impl TeacherModel {
    pub fn action_count(&self) -> usize {
        match &self.params {
            TeacherParams::TabularTile(t) => t.action_count,
            TeacherParams::MlpDqn { net, .. } => net.output_count(),
        }
    }

    pub fn feature_count(&self) -> usize {
        match &self.params {
            TeacherParams::TabularTile(t) => t.bounds.len(),
            TeacherParams::MlpDqn { net, .. } => net.input_count(),
        }
    }

    /// The soft output Q(obs, action).
    pub fn q(&self, obs: &Observation, action: ActionId) -> Result<f64> {
        if !self.trained {
            return Err(Error::usage("teacher model is not trained"));
        }
        if action.index() >= self.action_count() {
            return Err(Error::usage(format!(
                "action {} out of range (|A| = {})",
                action.index(),
                self.action_count()
            )));
        }
        match &self.params {
            TeacherParams::TabularTile(t) => t.q(obs, action.index()),
            TeacherParams::MlpDqn { net, input_bounds } => {
                if obs.len() != net.input_count() {
                    return Err(Error::DimensionMismatch {
                        expected: net.input_count(),
                        got: obs.len(),
                    });
                }
                let x = normalize_input(obs.values(), input_bounds);
                Ok(net.forward(&x)[action.index()])
            }
        }
    }

    pub fn greedy(&self, obs: &Observation) -> Result<ActionId> {
        Ok(self.q_values(obs)?.greedy())
    }

    pub fn q_values(&self, obs: &Observation) -> Result<QVector> {
        if !self.trained {
            return Err(Error::usage("teacher model is not trained"));
        }
        match &self.params {
            TeacherParams::TabularTile(t) => {
                let values: Vec<f64> = (0..t.action_count)
                    .map(|a| t.q(obs, a))
                    .collect::<Result<_>>()?;
                QVector::new(values)
            }
            TeacherParams::MlpDqn { net, input_bounds } => {
                if obs.len() != net.input_count() {
                    return Err(Error::DimensionMismatch {
                        expected: net.input_count(),
                        got: obs.len(),
                    });
                }
                let x = normalize_input(obs.values(), input_bounds);
                QVector::new(net.forward(&x))
            }
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<TeacherModel> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// FNV-1a hash of the canonical JSON form; identifies the exact teacher
    /// that labelled a dataset.
    pub fn fingerprint(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("teacher serializes");
        fnv1a(&bytes)
    }
}

impl QSource for TeacherModel {
    fn q_vector(&self, obs: &Observation) -> Result<QVector> {
        self.q_values(obs)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// TD target: `r + gamma * bootstrap`, with terminal states bootstrapping 0.
fn td_target(reward: f64, done: bool, bootstrap_max: f64, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * bootstrap_max
    }
}

/// Linear decay from start to final over the first half of the budget,
/// holding the final value afterwards.
pub(crate) fn epsilon_at(step: usize, budget: usize, start: f64, fin: f64) -> f64 {
    let half = (budget / 2).max(1);
    if step >= half {
        fin
    } else {
        start + (fin - start) * step as f64 / half as f64
    }
}

/// Trains a teacher; errors with the achieved ARPE if the greedy policy
/// misses the configured threshold.
pub fn train(env: EnvKind, cfg: &TeacherConfig, seed: u64) -> Result<TeacherModel> {
    Ok(train_logged(env, cfg, seed, 0)?.0)
}

/// Like [`train`], additionally logging up to `log_cap` visited
/// transitions in training order (for the experience dataset).
pub fn train_logged(
    env: EnvKind,
    cfg: &TeacherConfig,
    seed: u64,
    log_cap: usize,
) -> Result<(TeacherModel, Vec<Visit>)> {
    let mut env_box = make_env(env);
    let mut log = Vec::new();
    let (params, gamma, threshold, eval_episodes) = match cfg {
        TeacherConfig::Tile(c) => {
            let table = train_tile(env_box.as_mut(), c, seed, log_cap, &mut log)?;
            (
                TeacherParams::TabularTile(table),
                c.gamma,
                c.arpe_threshold,
                c.eval_episodes,
            )
        }
        TeacherConfig::Dqn(c) => {
            let input_bounds = env_box.tile_bounds().map(|b| b.to_vec());
            let net = train_dqn(env_box.as_mut(), c, seed, log_cap, &mut log, &input_bounds);
            (
                TeacherParams::MlpDqn { net, input_bounds },
                c.gamma,
                c.arpe_threshold,
                c.eval_episodes,
            )
        }
    };

    let model = TeacherModel {
        env,
        gamma,
        trained: true,
        params,
    };

    if threshold > f64::NEG_INFINITY {
        // Evaluation seeds are offset from the training seeds.
        let report = play_eval(&model, env_box.as_mut(), eval_episodes, seed + 1_000_000)?;
        if report.arpe < threshold {
            return Err(Error::TrainingFailure {
                achieved: report.arpe,
                threshold,
            });
        }
    }
    Ok((model, log))
}

fn greedy_index(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

fn log_visit(
    log: &mut Vec<Visit>,
    cap: usize,
    obs: &Observation,
    action: usize,
    reward: f64,
    next_obs: &Observation,
    done: bool,
) {
    if log.len() < cap {
        log.push(Visit {
            obs: obs.clone(),
            action: ActionId(action),
            reward,
            next_obs: next_obs.clone(),
            done,
        });
    }
}

fn train_tile(
    env: &mut dyn Environment,
    cfg: &TileConfig,
    seed: u64,
    log_cap: usize,
    log: &mut Vec<Visit>,
) -> Result<TileTable> {
    let bounds = env
        .tile_bounds()
        .ok_or_else(|| Error::usage("environment has no tile bounds; use the DQN teacher"))?
        .to_vec();
    let actions = env.spec().action_count;
    let mut table = TileTable::new(cfg.tilings, cfg.bins, bounds, actions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for ep in 0..cfg.episodes {
        let eps = epsilon_at(ep, cfg.episodes, cfg.epsilon_start, cfg.epsilon_final);
        let mut obs = env.reset(seed + ep as u64);
        loop {
            let action = if rng.random::<f64>() < eps {
                rng.random_range(0..actions)
            } else {
                let q: Vec<f64> = (0..actions).map(|a| table.q(&obs, a).unwrap()).collect();
                greedy_index(&q)
            };
            let step = env.step(ActionId(action))?;
            let bootstrap = (0..actions)
                .map(|a| table.q(&step.next_obs, a).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            let target = td_target(step.reward, step.done, bootstrap, cfg.gamma);
            table.td_update(&obs, action, target, cfg.alpha);
            log_visit(
                log,
                log_cap,
                &obs,
                action,
                step.reward,
                &step.next_obs,
                step.done,
            );
            obs = step.next_obs;
            if step.done {
                break;
            }
        }
    }
    Ok(table)
}

fn train_dqn(
    env: &mut dyn Environment,
    cfg: &DqnConfig,
    seed: u64,
    log_cap: usize,
    log: &mut Vec<Visit>,
    input_bounds: &Option<Vec<(f64, f64)>>,
) -> MlpNet {
    let spec = env.spec().clone();
    let mut sizes = vec![spec.feature_count];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(spec.action_count);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = MlpNet::init(&sizes, &mut rng);
    let mut target_net = net.clone();
    // Replay stores normalized inputs; the visit log keeps raw observations.
    let mut replay: VecDeque<(Vec<f64>, usize, f64, Vec<f64>, bool)> =
        VecDeque::with_capacity(cfg.replay_capacity);
    let mut step_count: usize = 0;

    for ep in 0..cfg.episodes {
        let eps = epsilon_at(ep, cfg.episodes, cfg.epsilon_start, cfg.epsilon_final);
        let mut obs = env.reset(seed + ep as u64);
        let mut x = normalize_input(obs.values(), input_bounds);
        loop {
            let action = if rng.random::<f64>() < eps {
                rng.random_range(0..spec.action_count)
            } else {
                greedy_index(&net.forward(&x))
            };
            let step = env.step(ActionId(action)).expect("episode active");
            log_visit(
                log,
                log_cap,
                &obs,
                action,
                step.reward,
                &step.next_obs,
                step.done,
            );
            let x_next = normalize_input(step.next_obs.values(), input_bounds);
            if replay.len() == cfg.replay_capacity {
                replay.pop_front();
            }
            replay.push_back((x.clone(), action, step.reward, x_next.clone(), step.done));

            if replay.len() >= cfg.warmup && step_count % cfg.train_every == 0 {
                let mut grads = net.zeros_like();
                for _ in 0..cfg.minibatch {
                    let idx = rng.random_range(0..replay.len());
                    let (o, a, r, n, d) = &replay[idx];
                    let bootstrap = target_net
                        .forward(n)
                        .into_iter()
                        .fold(f64::NEG_INFINITY, f64::max);
                    let target = td_target(*r, *d, bootstrap, cfg.gamma);
                    net.accumulate_td_gradient(o, *a, target, &mut grads);
                }
                net.apply_gradients(&grads, cfg.alpha / cfg.minibatch as f64);
            }

            step_count += 1;
            if step_count % cfg.target_refresh == 0 {
                target_net = net.clone();
            }
            obs = step.next_obs;
            x = x_next;
            if step.done {
                break;
            }
        }
    }
    net
}
