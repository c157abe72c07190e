//! Mimic training data in two settings.
//!
//! Experience training records every state-action pair visited while the
//! teacher itself trains, then labels the log by querying the mature
//! teacher. Active play streams fresh transitions from the mature teacher
//! driving the environment with an epsilon-greedy querying function whose
//! epsilon decays from 1 to 0 over the first half of the query budget.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{make_env, EnvKind, Environment};
use crate::error::{Error, Result};
use crate::teacher::{epsilon_at, train_logged, TeacherConfig, TeacherModel};
use crate::types::{ActionId, Observation, TransitionRecord};

/// A batch mimic dataset labelled by the teacher that produced it.
#[derive(Debug, Clone)]
pub struct ExperienceDataset {
    pub records: Vec<TransitionRecord>,
    pub env: EnvKind,
    pub teacher_fingerprint: u64,
}

impl ExperienceDataset {
    /// Contiguous 10-fold boundaries in recording order: fold k is
    /// `records[bounds[k] .. bounds[k + 1]]`.
    pub fn fold_bounds(&self, folds: usize) -> Vec<usize> {
        let n = self.records.len();
        (0..=folds).map(|k| k * n / folds).collect()
    }
}

/// Runs teacher training while logging every visited pair, labels the
/// first `n` visits with the mature teacher, and returns the dataset
/// together with that teacher.
pub fn record_experience(
    env: EnvKind,
    cfg: &TeacherConfig,
    seed: u64,
    n: usize,
) -> Result<(ExperienceDataset, TeacherModel)> {
    if n == 0 {
        return Err(Error::usage("experience dataset size must be at least 1"));
    }
    let (teacher, visits) = train_logged(env, cfg, seed, n)?;
    if visits.len() < n {
        return Err(Error::usage(format!(
            "teacher training visited {} pairs; {n} requested — raise the training budget",
            visits.len()
        )));
    }
    let mut records = Vec::with_capacity(n);
    for v in visits {
        let q_hat = teacher.q(&v.obs, v.action)?;
        records.push(TransitionRecord::new(
            v.obs, v.action, v.reward, v.next_obs, q_hat, v.done,
        )?);
    }
    let fingerprint = teacher.fingerprint();
    Ok((
        ExperienceDataset {
            records,
            env,
            teacher_fingerprint: fingerprint,
        },
        teacher,
    ))
}

/// Streaming mimic data from a mature teacher interacting with the
/// environment. Batches always hold exactly `batch_size` transitions;
/// episodes chain seamlessly across resets.
pub struct ActiveStream {
    env: Box<dyn Environment>,
    rng: ChaCha8Rng,
    batch_size: usize,
    query_budget: usize,
    queries_made: usize,
    epsilon_start: f64,
    epsilon_final: f64,
    seed: u64,
    episode: u64,
    current_obs: Observation,
    open: bool,
}

impl ActiveStream {
    pub fn new(env_kind: EnvKind, seed: u64, batch_size: usize, query_budget: usize) -> Result<Self> {
        Self::with_schedule(env_kind, seed, batch_size, query_budget, 1.0, 0.0)
    }

    pub fn with_schedule(
        env_kind: EnvKind,
        seed: u64,
        batch_size: usize,
        query_budget: usize,
        epsilon_start: f64,
        epsilon_final: f64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::usage("batch size must be at least 1"));
        }
        let mut env = make_env(env_kind);
        let current_obs = env.reset(seed);
        Ok(ActiveStream {
            env,
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch_size,
            query_budget: query_budget.max(1),
            queries_made: 0,
            epsilon_start,
            epsilon_final,
            seed,
            episode: 0,
            current_obs,
            open: true,
        })
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(
            self.queries_made,
            self.query_budget,
            self.epsilon_start,
            self.epsilon_final,
        )
    }

    pub fn queries_made(&self) -> usize {
        self.queries_made
    }

    pub fn close(&mut self) {
        self.open = false;
    }

    /// Produces the next `batch_size` transitions: epsilon-greedy action
    /// from the teacher, soft label from the teacher, one environment
    /// step; terminal episodes reset and the stream continues.
    pub fn next_batch(&mut self, teacher: &TeacherModel) -> Result<Vec<TransitionRecord>> {
        if !self.open {
            return Err(Error::usage("next_batch on a closed stream"));
        }
        let actions = self.env.spec().action_count;
        if teacher.action_count() != actions {
            return Err(Error::usage(
                "teacher action count does not match the environment",
            ));
        }
        let mut batch = Vec::with_capacity(self.batch_size);
        while batch.len() < self.batch_size {
            let eps = self.epsilon();
            let action = if self.rng.random::<f64>() < eps {
                ActionId(self.rng.random_range(0..actions))
            } else {
                teacher.greedy(&self.current_obs)?
            };
            let q_hat = teacher.q(&self.current_obs, action)?;
            let step = self.env.step(action)?;
            batch.push(TransitionRecord::new(
                self.current_obs.clone(),
                action,
                step.reward,
                step.next_obs.clone(),
                q_hat,
                step.done,
            )?);
            self.queries_made += 1;
            if step.done {
                self.episode += 1;
                self.current_obs = self.env.reset(self.seed + self.episode);
            } else {
                self.current_obs = step.next_obs;
            }
        }
        Ok(batch)
    }
}
