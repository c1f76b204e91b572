//! Deep Q-learning with experience replay and a periodically synced target
//! network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::hyper::Hyperparameters;
use super::nn::{Adam, Gradients, NeuralNet};
use super::replay::{ReplayBuffer, Transition};
use super::{argmax_masked, seeded_rng};
use crate::error::{Result, SimError};

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub hp: Hyperparameters,
    pub epsilon: f64,
    online: NeuralNet,
    target: NeuralNet,
    opt: Adam,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    train_steps: u64,
}

impl DqnAgent {
    pub fn new(hp: Hyperparameters, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let online = NeuralNet::new(&hp.layer_sizes(), &mut rng);
        Self::with_net(hp, online, rng)
    }

    /// Wrap an existing network, e.g. one restored from a checkpoint.
    pub fn from_net(hp: Hyperparameters, online: NeuralNet, seed: u64) -> Self {
        Self::with_net(hp, online, seeded_rng(seed))
    }

    fn with_net(hp: Hyperparameters, online: NeuralNet, rng: ChaCha8Rng) -> Self {
        DqnAgent {
            epsilon: hp.epsilon,
            target: online.clone(),
            opt: Adam::new(&online, hp.learning_rate),
            replay: ReplayBuffer::new(hp.replay_capacity),
            online,
            rng,
            train_steps: 0,
            hp,
        }
    }

    pub fn net(&self) -> &NeuralNet {
        &self.online
    }

    pub fn target_net(&self) -> &NeuralNet {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn q_values(&self, state: &[f64]) -> Vec<f64> {
        self.online.forward(state)
    }

    /// ε-greedy over the feasible actions; ties go to the lowest index.
    pub fn act(&mut self, state: &[f64], mask: &[bool], epsilon: f64) -> usize {
        let feasible: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        assert!(!feasible.is_empty(), "no feasible action");
        let explore = self.rng.gen::<f64>() < epsilon;
        if explore {
            return feasible[self.rng.gen_range(0..feasible.len())];
        }
        argmax_masked(&self.q_values(state), mask).expect("non-empty mask")
    }

    /// Store a transition and, once a full batch is available, take one
    /// training step. Returns that step's loss.
    pub fn observe(&mut self, t: Transition) -> Result<Option<f64>> {
        self.replay.push(t);
        if self.replay.len() < self.hp.batch_size {
            return Ok(None);
        }
        let batch: Vec<Transition> = self
            .replay
            .sample(self.hp.batch_size, &mut self.rng)
            .into_iter()
            .cloned()
            .collect();
        self.train_step(&batch).map(Some)
    }

    /// Bootstrap target r + γ · max over feasible a' of Q_target(s', a').
    pub fn td_target(&self, t: &Transition) -> f64 {
        if t.done {
            return t.reward;
        }
        let next_q = self.target.forward(&t.next_state);
        let best = argmax_masked(&next_q, &t.next_mask).map_or(0.0, |a| next_q[a]);
        t.reward + self.hp.gamma * best
    }

    /// One gradient step on the mean squared TD error of `batch`.
    pub fn train_step(&mut self, batch: &[Transition]) -> Result<f64> {
        assert!(!batch.is_empty(), "empty training batch");
        let scale = 1.0 / batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.online);
        let mut loss = 0.0;
        let mut out_grad = vec![0.0; self.online.output_size()];
        for t in batch {
            let y = self.td_target(t);
            let cache = self.online.forward_cached(&t.state);
            let diff = cache.output()[t.action] - y;
            loss += diff * diff;
            out_grad.iter_mut().for_each(|g| *g = 0.0);
            out_grad[t.action] = 2.0 * diff * scale;
            self.online.backward_into(&cache, &out_grad, &mut grads);
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(SimError::Divergence {
                loss,
                hyperparameters: self.hp.to_string(),
            });
        }
        self.opt.step(&mut self.online, &grads);
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.hp.target_sync_every) {
            self.target = self.online.clone();
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::nn::Layer;

    fn small_hp() -> Hyperparameters {
        Hyperparameters { window_k: 2, hidden_sizes: vec![4], batch_size: 1, replay_capacity: 16, ..Default::default() }
    }

    fn transition(s: Vec<f64>, action: usize, reward: f64, done: bool) -> Transition {
        let n = s.len();
        Transition { state: s, action, reward, next_state: vec![0.5; n], next_mask: vec![true; 3], done }
    }

    #[test]
    fn greedy_picks_argmax() {
        // linear net whose output equals its bias
        let layer = Layer { inputs: 8, outputs: 3, weights: vec![0.0; 24], biases: vec![0.1, 0.9, 0.3] };
        let hp = Hyperparameters { window_k: 2, hidden_sizes: vec![], ..Default::default() };
        let mut a = DqnAgent::from_net(hp, NeuralNet::from_layers(vec![layer]).unwrap(), 0);
        let s = vec![0.0; 8];
        assert_eq!(a.act(&s, &[true, true, true], 0.0), 1);
        assert_eq!(a.act(&s, &[true, false, true], 0.0), 2);
        for eps in [0.0, 0.5, 1.0] {
            assert_eq!(a.act(&s, &[false, false, true], eps), 2);
        }
    }

    #[test]
    fn terminal_target_is_reward() {
        let a = DqnAgent::new(small_hp(), 1);
        let t = transition(vec![0.2; 8], 0, -0.7, true);
        assert_eq!(a.td_target(&t), -0.7);
    }

    #[test]
    fn gamma_zero_loss_is_mean_q_squared() {
        let hp = Hyperparameters { gamma: 0.0, batch_size: 3, ..small_hp() };
        let mut a = DqnAgent::new(hp, 2);
        let batch: Vec<Transition> = (0..3)
            .map(|i| transition(vec![0.1 * i as f64 + 0.05; 8], i % 3, 0.0, false))
            .collect();
        let expect: f64 = batch
            .iter()
            .map(|t| a.net().forward(&t.state)[t.action].powi(2))
            .sum::<f64>()
            / 3.0;
        let loss = a.train_step(&batch).unwrap();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn single_transition_loss_by_hand() {
        let mut a = DqnAgent::new(small_hp(), 3);
        let t = transition(vec![0.3, -0.1, 0.4, 0.2, 0.0, 0.7, 0.5, 0.1], 1, 0.25, false);
        let next_q = a.target_net().forward(&t.next_state);
        let y = 0.25 + 0.99 * next_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let q = a.net().forward(&t.state)[1];
        let loss = a.train_step(std::slice::from_ref(&t)).unwrap();
        assert!((loss - (q - y).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn target_syncs_on_schedule() {
        let hp = Hyperparameters { target_sync_every: 3, ..small_hp() };
        let mut a = DqnAgent::new(hp, 4);
        let t = transition(vec![0.3; 8], 0, 1.0, true);
        a.train_step(std::slice::from_ref(&t)).unwrap();
        a.train_step(std::slice::from_ref(&t)).unwrap();
        assert_ne!(a.net(), a.target_net());
        a.train_step(std::slice::from_ref(&t)).unwrap();
        assert_eq!(a.net(), a.target_net());
    }

    #[test]
    fn divergence_is_reported() {
        let mut a = DqnAgent::new(small_hp(), 5);
        let t = transition(vec![0.3; 8], 0, f64::INFINITY, true);
        match a.train_step(std::slice::from_ref(&t)) {
            Err(SimError::Divergence { hyperparameters, .. }) => assert!(hyperparameters.contains("gamma=")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn observe_waits_for_a_full_batch() {
        let hp = Hyperparameters { batch_size: 4, ..small_hp() };
        let mut a = DqnAgent::new(hp, 6);
        for i in 0..3 {
            assert!(a.observe(transition(vec![0.1 * i as f64; 8], 0, 0.0, false)).unwrap().is_none());
        }
        assert!(a.observe(transition(vec![0.0; 8], 0, 0.0, true)).unwrap().is_some());
        assert_eq!(a.train_steps(), 1);
    }
}
