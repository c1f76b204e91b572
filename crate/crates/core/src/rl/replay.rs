use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use super::state::StateVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    /// Slot index, or `window_k` for the no-op.
    pub action: usize,
    pub reward: f64,
    pub next_state: StateVector,
    /// Feasible actions in `next_state`; the bootstrap max ranges over these.
    pub next_mask: Vec<bool>,
    pub done: bool,
}

/// Fixed-capacity ring of transitions; the oldest is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` distinct transitions chosen uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        assert!(n <= self.items.len(), "sampling {n} from {} transitions", self.items.len());
        index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}
