//! A small fully-connected Q-network with hand-rolled backpropagation.
//!
//! Hidden layers use ReLU, the output layer is linear with one unit per
//! action. Gradients are taken of the squared temporal-difference loss
//! for a single (state, action) pair, so the backward pass seeds only the
//! chosen action's output.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNet {
    /// Layer widths including input and output, e.g. [1024, 64, 32, 2].
    pub layer_sizes: Vec<usize>,
    /// Per layer, row-major [output][input].
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Per-layer gradient accumulator matching an `MlpNet`'s shape.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpNet {
    pub fn init(layer_sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            let layer: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
                .collect();
            weights.push(layer);
            biases.push(vec![0.0; fan_out]);
        }
        MlpNet {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn zeros_like(&self) -> MlpGradients {
        MlpGradients {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn output_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn input_count(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Q-values for all actions.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut act = input.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let fan_in = self.layer_sizes[l];
            let fan_out = self.layer_sizes[l + 1];
            let mut next = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut sum = b[o];
                for (x, wv) in act.iter().zip(row) {
                    sum += x * wv;
                }
                next[o] = if l == last { sum } else { sum.max(0.0) };
            }
            act = next;
        }
        act
    }

    /// Forward pass retaining post-activation values per layer (input first).
    fn forward_cached(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let fan_in = self.layer_sizes[l];
            let fan_out = self.layer_sizes[l + 1];
            let prev = &acts[l];
            let mut next = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut sum = b[o];
                for (x, wv) in prev.iter().zip(row) {
                    sum += x * wv;
                }
                next[o] = if l == last { sum } else { sum.max(0.0) };
            }
            acts.push(next);
        }
        acts
    }

    /// Squared TD loss for one sample: (target - Q(input, action))^2.
    pub fn td_loss(&self, input: &[f64], action: usize, target: f64) -> f64 {
        let q = self.forward(input)[action];
        (target - q) * (target - q)
    }

    /// Accumulates d/dtheta of the squared TD loss into `grads`; returns
    /// the sample loss.
    pub fn accumulate_td_gradient(
        &self,
        input: &[f64],
        action: usize,
        target: f64,
        grads: &mut MlpGradients,
    ) -> f64 {
        let acts = self.forward_cached(input);
        let q = acts.last().unwrap()[action];
        let loss = (target - q) * (target - q);

        // Seed: dL/dq_a = -2 (target - q_a); other outputs contribute zero.
        let mut delta = vec![0.0; self.output_count()];
        delta[action] = -2.0 * (target - q);

        for l in (0..self.weights.len()).rev() {
            let fan_in = self.layer_sizes[l];
            let fan_out = self.layer_sizes[l + 1];
            let prev = &acts[l];
            let mut prev_delta = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grads.biases[l][o] += d;
                let row = &self.weights[l][o * fan_in..(o + 1) * fan_in];
                let grow = &mut grads.weights[l][o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    grow[i] += d * prev[i];
                    prev_delta[i] += d * row[i];
                }
            }
            if l > 0 {
                // ReLU derivative on the layer below (post-activation > 0).
                for (pd, &a) in prev_delta.iter_mut().zip(prev) {
                    if a <= 0.0 {
                        *pd = 0.0;
                    }
                }
            }
            delta = prev_delta;
        }
        loss
    }

    /// Gradient-descent step: theta <- theta - scale * grads.
    pub fn apply_gradients(&mut self, grads: &MlpGradients, scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (wv, gv) in w.iter_mut().zip(g) {
                *wv -= scale * gv;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (bv, gv) in b.iter_mut().zip(g) {
                *bv -= scale * gv;
            }
        }
    }
}
