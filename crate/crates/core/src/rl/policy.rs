//! Glue between an agent and the engine's policy interface.
//!
//! Each invocation repeatedly encodes the state, asks the agent for an
//! action and appends the chosen job, until the agent picks the no-op or no
//! visible job fits. Reward accrues between invocations and is credited to
//! the most recent action when the next one is taken (or the episode ends).

use super::checkpoint::{Algorithm, Checkpoint};
use super::dqn::DqnAgent;
use super::hyper::{decay_epsilon, Hyperparameters};
use super::nn::NeuralNet;
use super::pg::{PgAgent, Step};
use super::replay::Transition;
use super::state::{action_mask, compute_reward, encode_state, StateVector, TAU};
use crate::error::Result;
use crate::metrics::{DebugLog, Level};
use crate::policy::{PolicyKind, SchedContext, ScheduleDecision, SchedulingPolicy};
use crate::queue::Job;
use crate::swf::{JobId, Time};

#[derive(Debug, Clone)]
pub enum Agent {
    Dqn(DqnAgent),
    Pg(PgAgent),
}

impl Agent {
    pub fn new(kind: PolicyKind, hp: Hyperparameters, seed: u64) -> Option<Agent> {
        match kind {
            PolicyKind::Dqn => Some(Agent::Dqn(DqnAgent::new(hp, seed))),
            PolicyKind::Pg => Some(Agent::Pg(PgAgent::new(hp, seed))),
            _ => None,
        }
    }

    pub fn from_checkpoint(c: Checkpoint, seed: u64) -> Agent {
        match c.algorithm {
            Algorithm::Dqn => {
                let mut a = DqnAgent::from_net(c.hp, c.net, seed);
                a.epsilon = c.epsilon;
                Agent::Dqn(a)
            }
            Algorithm::Pg => {
                let mut a = PgAgent::from_net(c.hp, c.net, seed);
                a.epsilon = c.epsilon;
                Agent::Pg(a)
            }
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (algorithm, epsilon) = match self {
            Agent::Dqn(a) => (Algorithm::Dqn, a.epsilon),
            Agent::Pg(a) => (Algorithm::Pg, a.epsilon),
        };
        Checkpoint { algorithm, epsilon, hp: self.hp().clone(), net: self.net().clone() }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Agent::Dqn(_) => PolicyKind::Dqn,
            Agent::Pg(_) => PolicyKind::Pg,
        }
    }

    pub fn hp(&self) -> &Hyperparameters {
        match self {
            Agent::Dqn(a) => &a.hp,
            Agent::Pg(a) => &a.hp,
        }
    }

    pub fn net(&self) -> &NeuralNet {
        match self {
            Agent::Dqn(a) => a.net(),
            Agent::Pg(a) => a.net(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Agent::Dqn(a) => a.epsilon,
            Agent::Pg(a) => a.epsilon,
        }
    }

    fn epsilon_mut(&mut self) -> &mut f64 {
        match self {
            Agent::Dqn(a) => &mut a.epsilon,
            Agent::Pg(a) => &mut a.epsilon,
        }
    }

    /// Exploratory action while training, greedy otherwise.
    pub fn act(&mut self, state: &[f64], mask: &[bool], explore: bool) -> usize {
        match self {
            Agent::Dqn(a) => {
                let eps = if explore { a.epsilon } else { 0.0 };
                a.act(state, mask, eps)
            }
            Agent::Pg(a) => a.act(state, mask, !explore),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeStats {
    pub total_reward: f64,
    pub decisions: u64,
    pub loss_sum: f64,
    pub loss_count: u64,
}

impl EpisodeStats {
    pub fn mean_loss(&self) -> Option<f64> {
        (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64)
    }
}

#[derive(Debug, Clone)]
struct Pending {
    state: StateVector,
    mask: Vec<bool>,
    action: usize,
}

#[derive(Debug, Clone)]
pub struct RlPolicy {
    agent: Agent,
    training: bool,
    pending: Option<Pending>,
    pending_reward: f64,
    last_invoke: Option<Time>,
    trajectory: Vec<Step>,
    stats: EpisodeStats,
}

impl RlPolicy {
    pub fn new(agent: Agent, training: bool) -> Self {
        RlPolicy {
            agent,
            training,
            pending: None,
            pending_reward: 0.0,
            last_invoke: None,
            trajectory: Vec::new(),
            stats: EpisodeStats::default(),
        }
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn into_agent(self) -> Agent {
        self.agent
    }

    pub fn kind(&self) -> PolicyKind {
        self.agent.kind()
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn epsilon(&self) -> f64 {
        if self.training {
            self.agent.epsilon()
        } else {
            0.0
        }
    }

    pub fn decay_epsilon(&mut self) {
        let hp = self.agent.hp().clone();
        let eps = self.agent.epsilon_mut();
        *eps = decay_epsilon(&hp, *eps);
    }

    pub fn take_episode_stats(&mut self) -> EpisodeStats {
        std::mem::take(&mut self.stats)
    }

    /// Credit the accrued reward to the previous action.
    fn close_pending(&mut self, next_state: StateVector, next_mask: Vec<bool>, done: bool) -> Result<()> {
        let reward = std::mem::take(&mut self.pending_reward);
        let Some(p) = self.pending.take() else {
            return Ok(());
        };
        if !self.training {
            return Ok(());
        }
        match &mut self.agent {
            Agent::Dqn(a) => {
                let t = Transition { state: p.state, action: p.action, reward, next_state, next_mask, done };
                if let Some(loss) = a.observe(t)? {
                    self.stats.loss_sum += loss;
                    self.stats.loss_count += 1;
                }
            }
            Agent::Pg(_) => self.trajectory.push(Step { state: p.state, mask: p.mask, action: p.action, reward }),
        }
        Ok(())
    }
}

impl SchedulingPolicy for RlPolicy {
    fn name(&self) -> &str {
        self.agent.kind().as_str()
    }

    fn select(&mut self, ctx: &SchedContext<'_>, log: &mut DebugLog) -> Result<ScheduleDecision> {
        let k = self.agent.hp().window_k;
        let now = ctx.now;
        if let Some(last) = self.last_invoke {
            let r = compute_reward(ctx.queue.iter(), now, last, TAU);
            self.pending_reward += r;
            self.stats.total_reward += r;
        }
        self.last_invoke = Some(now);

        let idle = ctx.running.is_empty();
        let mut chosen: Vec<JobId> = Vec::new();
        let mut free = ctx.free_nodes;
        loop {
            let window: Vec<&Job> = ctx.queue.iter().filter(|j| !chosen.contains(&j.id())).take(k).collect();
            // with nothing running and nothing started, waiting could stall the run
            let allow_noop = !(idle && chosen.is_empty());
            let mask = action_mask(&window, free, k, allow_noop);
            if !mask[..k].iter().any(|&m| m) {
                break;
            }
            let state = encode_state(&window, ctx.queue.len() - chosen.len(), free, ctx.total_nodes, now, k);
            self.close_pending(state.clone(), mask.clone(), false)?;
            let action = self.agent.act(&state, &mask, self.training);
            debug_assert!(mask[action], "agent chose an infeasible action");
            self.stats.decisions += 1;
            log.log_with(Level::Rl, || match window.get(action) {
                Some(j) => format!("action={action} job={}", j.id()),
                None => format!("action={action} noop"),
            })?;
            if self.training {
                self.pending = Some(Pending { state, mask, action });
            }
            let Some(job) = window.get(action) else {
                break;
            };
            chosen.push(job.id());
            free -= job.record.requested_nodes;
        }
        Ok(chosen.into())
    }

    fn finish(&mut self, _now: Time, log: &mut DebugLog) -> Result<()> {
        let n = self.agent.hp().num_actions();
        let len = self.agent.hp().state_len();
        self.close_pending(vec![0.0; len], vec![false; n], true)?;
        if let Agent::Pg(a) = &mut self.agent {
            if self.training && !self.trajectory.is_empty() {
                let loss = a.update(&self.trajectory)?;
                self.stats.loss_sum += loss;
                self.stats.loss_count += 1;
                log.log_with(Level::Rl, || format!("pg_update steps={} loss={loss:.9e}", self.trajectory.len()))?;
            }
        }
        self.trajectory.clear();
        self.pending_reward = 0.0;
        self.last_invoke = None;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::simulate;
    use crate::queue::JobQueue;
    use crate::rl::nn::Layer;
    use crate::swf::JobRecord;
    use proptest::prelude::*;

    fn rec(id: JobId, submit: Time, rt: Time, nodes: u32) -> JobRecord {
        JobRecord { job_id: id, submit_time: submit, actual_runtime: rt, requested_nodes: nodes, requested_time: rt.max(1) }
    }

    fn hp() -> Hyperparameters {
        Hyperparameters { window_k: 3, hidden_sizes: vec![8], batch_size: 4, replay_capacity: 64, ..Default::default() }
    }

    /// Linear net whose outputs are its biases, regardless of input.
    fn biased(bias: Vec<f64>) -> Agent {
        let hp = Hyperparameters { hidden_sizes: vec![], ..hp() };
        let layer = Layer { inputs: hp.state_len(), outputs: bias.len(), weights: vec![0.0; hp.state_len() * bias.len()], biases: bias };
        Agent::Dqn(DqnAgent::from_net(hp, NeuralNet::from_layers(vec![layer]).unwrap(), 0))
    }

    fn ctx<'a>(q: &'a JobQueue, free: u32, total: u32, running: &'a [crate::policy::Reservation]) -> SchedContext<'a> {
        SchedContext { now: 0, queue: q.view(), free_nodes: free, total_nodes: total, running }
    }

    #[test]
    fn empty_queue_yields_nothing() {
        let mut p = RlPolicy::new(Agent::new(PolicyKind::Dqn, hp(), 1).unwrap(), true);
        let q = JobQueue::new();
        let d = p.select(&ctx(&q, 4, 4, &[]), &mut DebugLog::disabled()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn greedy_head_preference_selects_head_first() {
        let mut p = RlPolicy::new(biased(vec![1.0, 0.5, 0.2, 0.0]), false);
        let mut q = JobQueue::new();
        for i in 1..=3 {
            q.enqueue(rec(i, 0, 10, 1), 0).unwrap();
        }
        let d = p.select(&ctx(&q, 2, 4, &[]), &mut DebugLog::disabled()).unwrap();
        assert_eq!(d.jobs, vec![1, 2]);
    }

    #[test]
    fn noop_is_respected_while_jobs_run() {
        let mut p = RlPolicy::new(biased(vec![0.0, 0.0, 0.0, 1.0]), false);
        let mut q = JobQueue::new();
        q.enqueue(rec(1, 0, 10, 1), 0).unwrap();
        let running = [crate::policy::Reservation { job_id: 9, nodes: 1, expected_end: 5 }];
        let d = p.select(&ctx(&q, 3, 4, &running), &mut DebugLog::disabled()).unwrap();
        assert!(d.is_empty());
        // an idle cluster forbids the no-op for the first pick
        let d = p.select(&ctx(&q, 4, 4, &[]), &mut DebugLog::disabled()).unwrap();
        assert_eq!(d.jobs, vec![1]);
    }

    #[test]
    fn training_episode_runs_to_completion() {
        let jobs: Vec<JobRecord> = (0..30).map(|i| rec(i + 1, i / 3, 1 + (i % 4) * 7, 1 + (i % 2) as u32)).collect();
        for kind in [PolicyKind::Dqn, PolicyKind::Pg] {
            let mut p = RlPolicy::new(Agent::new(kind, hp(), 3).unwrap(), true);
            let (summary, done) = simulate(&jobs, 3, &mut p).unwrap();
            assert_eq!(done.len(), 30);
            let stats = p.take_episode_stats();
            assert!(stats.decisions >= 30);
            assert!(stats.total_reward <= 0.0);
            // total reward is the negated, normalized sum of waits
            let wait: f64 = done.iter().map(|j| j.wait_time().unwrap() as f64).sum();
            assert!((stats.total_reward + wait / (TAU * 100.0)).abs() < 1e-12);
            assert_eq!(summary.metrics.finished_count, 30);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn decisions_are_prefix_feasible(
            jobs in prop::collection::vec((1u32..=4, 1u64..30), 1..12),
            free in 0u32..=4,
            seed in 0u64..1000,
            training: bool,
        ) {
            let mut q = JobQueue::new();
            for (i, (n, rt)) in jobs.iter().enumerate() {
                q.enqueue(rec(i as u64 + 1, 0, *rt, *n), 0).unwrap();
            }
            let agent = Agent::new(if seed % 2 == 0 { PolicyKind::Dqn } else { PolicyKind::Pg }, hp(), seed).unwrap();
            let mut p = RlPolicy::new(agent, training);
            let running = [crate::policy::Reservation { job_id: 99, nodes: 4 - free, expected_end: 10 }];
            let running: &[_] = if free < 4 { &running } else { &[] };
            let d = p.select(&ctx(&q, free, 4, running), &mut DebugLog::disabled()).unwrap();
            let mut left = free;
            for id in &d.jobs {
                let n = q.queued(*id).unwrap().record.requested_nodes;
                prop_assert!(n <= left);
                left -= n;
            }
            let mut ids = d.jobs.clone();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), d.jobs.len());
        }
    }
}
