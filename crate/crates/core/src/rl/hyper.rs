use std::fmt;

/// Tunable knobs for both RL agents. All defaults can be overridden from the
/// config folder or the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epsilon: f64,
    /// Multiplicative decay applied once per episode.
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub gamma: f64,
    /// Number of queued jobs visible to the agent.
    pub window_k: usize,
    pub hidden_sizes: Vec<usize>,
    pub replay_capacity: usize,
    /// Train steps between target-network syncs.
    pub target_sync_every: u64,
    pub episodes: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            learning_rate: 0.001,
            batch_size: 32,
            epsilon: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.05,
            gamma: 0.99,
            window_k: 5,
            hidden_sizes: vec![64, 64],
            replay_capacity: 10_000,
            target_sync_every: 200,
            episodes: 100,
        }
    }
}

impl Hyperparameters {
    /// Check every bound; the error names the offending field.
    pub fn validate(&self) -> Result<(), String> {
        let fail = |field: &str, why: String| Err(format!("{field}: {why}"));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail("epsilon", format!("must be in [0, 1], got {}", self.epsilon));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return fail("epsilon_decay", format!("must be in (0, 1], got {}", self.epsilon_decay));
        }
        if !(0.0..=1.0).contains(&self.epsilon_min) {
            return fail("epsilon_min", format!("must be in [0, 1], got {}", self.epsilon_min));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail("gamma", format!("must be in [0, 1), got {}", self.gamma));
        }
        if self.window_k == 0 {
            return fail("window_k", "must be at least 1".into());
        }
        if self.hidden_sizes.contains(&0) {
            return fail("hidden_sizes", "layer sizes must be at least 1".into());
        }
        if self.replay_capacity < self.batch_size {
            return fail(
                "replay_capacity",
                format!("must hold at least one batch ({}), got {}", self.batch_size, self.replay_capacity),
            );
        }
        if self.target_sync_every == 0 {
            return fail("target_sync_every", "must be at least 1".into());
        }
        if self.episodes == 0 {
            return fail("episodes", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn state_len(&self) -> usize {
        3 * self.window_k + 2
    }

    /// Actions: one per window slot plus the trailing no-op.
    pub fn num_actions(&self) -> usize {
        self.window_k + 1
    }

    /// [input, hidden..., output]
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.state_len()];
        sizes.extend(&self.hidden_sizes);
        sizes.push(self.num_actions());
        sizes
    }

    pub fn hidden_sizes_str(&self) -> String {
        self.hidden_sizes.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
    }

    /// `(name, value)` pairs in a fixed order.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("epsilon_decay", self.epsilon_decay.to_string()),
            ("epsilon_min", self.epsilon_min.to_string()),
            ("gamma", self.gamma.to_string()),
            ("window_k", self.window_k.to_string()),
            ("hidden_sizes", self.hidden_sizes_str()),
            ("replay_capacity", self.replay_capacity.to_string()),
            ("target_sync_every", self.target_sync_every.to_string()),
            ("episodes", self.episodes.to_string()),
        ]
    }
}

impl fmt::Display for Hyperparameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.fields().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}

/// One episode's worth of epsilon decay, floored at `epsilon_min`.
pub fn decay_epsilon(hp: &Hyperparameters, epsilon: f64) -> f64 {
    (epsilon * hp.epsilon_decay).max(hp.epsilon_min)
}
