//! Fidelity metrics, game-play evaluation (ARPE) and consecutive-testing
//! learning curves.
//!
//! Fidelity measures regression agreement between mimic predictions and
//! teacher soft labels. Play evaluation runs a greedy controller over
//! seeded episodes and reports the average reward per episode. Consecutive
//! testing is prequential: each minibatch is scored before it is absorbed.

use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::types::{QVector, TransitionRecord};

/// Anything that can produce a per-action Q-vector for an observation.
pub trait QSource {
    fn q_vector(&self, obs: &crate::types::Observation) -> Result<QVector>;

    /// Greedy action: argmax with ties broken toward the lowest index.
    fn greedy_action(&self, obs: &crate::types::Observation) -> Result<crate::types::ActionId> {
        Ok(self.q_vector(obs)?.greedy())
    }
}

/// Regression agreement between predictions and teacher targets.
///
/// `rae`/`rse` are `None` when the targets are constant (the relative
/// baselines are undefined there).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub mae: f64,
    pub rmse: f64,
    pub rae: Option<f64>,
    pub rse: Option<f64>,
    pub leaf_count: usize,
    pub n: usize,
}

pub fn fidelity(predictions: &[f64], targets: &[f64], leaf_count: usize) -> Result<FidelityReport> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;

    let mut abs_err = 0.0;
    let mut sq_err = 0.0;
    let mut abs_dev = 0.0;
    let mut sq_dev = 0.0;
    for (&p, &y) in predictions.iter().zip(targets) {
        let e = y - p;
        abs_err += e.abs();
        sq_err += e * e;
        abs_dev += (y - mean).abs();
        sq_dev += (y - mean) * (y - mean);
    }

    Ok(FidelityReport {
        mae: abs_err / n,
        rmse: (sq_err / n).sqrt(),
        rae: (abs_dev > 0.0).then(|| abs_err / abs_dev),
        rse: (sq_dev > 0.0).then(|| sq_err / sq_dev),
        leaf_count,
        n: targets.len(),
    })
}

/// Outcome of playing seeded episodes with a greedy controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayReport {
    pub arpe: f64,
    pub returns: Vec<f64>,
    pub episodes: usize,
    pub seed: u64,
}

/// Runs `episodes` greedy episodes; episode `i` resets with `seed + i`.
pub fn play_eval(
    policy: &dyn QSource,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
) -> Result<PlayReport> {
    if episodes == 0 {
        return Err(Error::usage("play_eval requires at least one episode"));
    }
    let mut returns = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut obs = env.reset(seed + i as u64);
        let mut ret = 0.0;
        loop {
            let action = policy.greedy_action(&obs)?;
            let step = env.step(action)?;
            ret += step.reward;
            obs = step.next_obs;
            if step.done {
                break;
            }
        }
        returns.push(ret);
    }
    let arpe = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(PlayReport {
        arpe,
        returns,
        episodes,
        seed,
    })
}

/// An online learner that can be scored and then updated batch by batch.
pub trait OnlineQLearner {
    fn predict_record(&self, record: &TransitionRecord) -> Result<f64>;
    fn absorb_batch(&mut self, batch: &[TransitionRecord]) -> Result<()>;
    fn leaf_count(&self) -> usize;
}

/// One point of a prequential learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub batch_index: usize,
    pub transitions_seen: usize,
    pub rae: Option<f64>,
    pub rse: Option<f64>,
}

/// Test-then-train: each batch from `next_batch` is evaluated with the
/// current model, then absorbed. Stops once `total` transitions have been
/// consumed or the supplier returns an empty batch.
pub fn consecutive_test<L, F>(
    learner: &mut L,
    mut next_batch: F,
    total: usize,
) -> Result<Vec<CurvePoint>>
where
    L: OnlineQLearner + ?Sized,
    F: FnMut() -> Result<Vec<TransitionRecord>>,
{
    let mut curve = Vec::new();
    let mut seen = 0;
    let mut batch_index = 0;
    while seen < total {
        let batch = next_batch()?;
        if batch.is_empty() {
            break;
        }
        let predictions: Vec<f64> = batch
            .iter()
            .map(|r| learner.predict_record(r))
            .collect::<Result<_>>()?;
        let targets: Vec<f64> = batch.iter().map(|r| r.q_hat).collect();
        let report = fidelity(&predictions, &targets, learner.leaf_count())?;

        learner.absorb_batch(&batch)?;
        seen += batch.len();
        curve.push(CurvePoint {
            batch_index,
            transitions_seen: seen,
            rae: report.rae,
            rse: report.rse,
        });
        batch_index += 1;
    }
    Ok(curve)
}
