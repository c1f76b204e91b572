//! REINFORCE with a mean-return baseline.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::hyper::Hyperparameters;
use super::nn::{Adam, Gradients, NeuralNet};
use super::state::StateVector;
use super::{argmax_masked, seeded_rng};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: StateVector,
    pub mask: Vec<bool>,
    pub action: usize,
    pub reward: f64,
}

/// Softmax over the feasible logits; infeasible entries get probability 0.
pub fn softmax_masked(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Discounted returns-to-go, G_t = r_t + γ G_{t+1}.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

#[derive(Debug, Clone)]
pub struct PgAgent {
    pub hp: Hyperparameters,
    /// Kept for a uniform agent surface; REINFORCE explores by sampling.
    pub epsilon: f64,
    net: NeuralNet,
    opt: Adam,
    rng: ChaCha8Rng,
    updates: u64,
}

impl PgAgent {
    pub fn new(hp: Hyperparameters, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let net = NeuralNet::new(&hp.layer_sizes(), &mut rng);
        Self::with_net(hp, net, rng)
    }

    pub fn from_net(hp: Hyperparameters, net: NeuralNet, seed: u64) -> Self {
        Self::with_net(hp, net, seeded_rng(seed))
    }

    fn with_net(hp: Hyperparameters, net: NeuralNet, rng: ChaCha8Rng) -> Self {
        PgAgent {
            epsilon: hp.epsilon,
            opt: Adam::new(&net, hp.learning_rate),
            net,
            rng,
            updates: 0,
            hp,
        }
    }

    pub fn net(&self) -> &NeuralNet {
        &self.net
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn policy(&self, state: &[f64], mask: &[bool]) -> Vec<f64> {
        softmax_masked(&self.net.forward(state), mask)
    }

    /// Sample from π(·|s), or take its mode when `greedy`.
    pub fn act(&mut self, state: &[f64], mask: &[bool], greedy: bool) -> usize {
        assert!(mask.iter().any(|&m| m), "no feasible action");
        let logits = self.net.forward(state);
        if greedy {
            return argmax_masked(&logits, mask).expect("non-empty mask");
        }
        let probs = softmax_masked(&logits, mask);
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, p) in probs.iter().enumerate() {
            if !mask[i] {
                continue;
            }
            last = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
        last
    }

    /// One gradient step on −Σ_t log π(a_t|s_t)·(G_t − mean G).
    pub fn update(&mut self, trajectory: &[Step]) -> Result<f64> {
        assert!(!trajectory.is_empty(), "empty trajectory");
        let rewards: Vec<f64> = trajectory.iter().map(|s| s.reward).collect();
        let returns = returns_to_go(&rewards, self.hp.gamma);
        let baseline = returns.iter().sum::<f64>() / returns.len() as f64;

        let mut grads = Gradients::zeros_like(&self.net);
        let mut loss = 0.0;
        let mut out_grad = vec![0.0; self.net.output_size()];
        for (step, g) in trajectory.iter().zip(&returns) {
            let adv = g - baseline;
            let cache = self.net.forward_cached(&step.state);
            let probs = softmax_masked(cache.output(), &step.mask);
            loss -= probs[step.action].ln() * adv;
            if adv == 0.0 {
                continue;
            }
            // d/dlogits of −log π(a) · A = (π − onehot(a)) · A on feasible entries
            for (i, o) in out_grad.iter_mut().enumerate() {
                let onehot = if i == step.action { 1.0 } else { 0.0 };
                *o = if step.mask[i] { (probs[i] - onehot) * adv } else { 0.0 };
            }
            self.net.backward_into(&cache, &out_grad, &mut grads);
        }
        if !loss.is_finite() {
            return Err(SimError::Divergence {
                loss,
                hyperparameters: self.hp.to_string(),
            });
        }
        self.opt.step(&mut self.net, &grads);
        self.updates += 1;
        Ok(loss)
    }
}
