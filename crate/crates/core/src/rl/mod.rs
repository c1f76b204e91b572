//! Reinforcement-learning scheduling policies.

pub mod checkpoint;
pub mod dqn;
pub mod hyper;
pub mod nn;
pub mod pg;
pub mod policy;
pub mod replay;
pub mod state;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::ClusterState;
use crate::engine::{Engine, EngineConfig, JobSink, Mode, NullSink, SimulationSummary};
use crate::error::Result;
use crate::metrics::{DebugLog, Level, Metrics};
use crate::swf::{JobRecord, JobStream};

pub use checkpoint::{Algorithm, Checkpoint};
pub use dqn::DqnAgent;
pub use hyper::{decay_epsilon, Hyperparameters};
pub use nn::NeuralNet;
pub use pg::PgAgent;
pub use policy::{Agent, RlPolicy};

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Index of the largest value among the feasible entries; ties go to the
/// lowest index. `None` when nothing is feasible.
pub fn argmax_masked(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in values.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub episode: usize,
    pub total_reward: f64,
    pub mean_loss: Option<f64>,
    /// Exploration rate used during the episode (before decay).
    pub epsilon: f64,
    pub decisions: u64,
    pub summary: SimulationSummary,
}

impl EpisodeReport {
    pub fn to_line(&self) -> String {
        let loss = self.mean_loss.map_or_else(|| "nan".to_string(), |l| format!("{l:.9e}"));
        format!(
            "episode={} total_reward={:.9e} loss={} epsilon={:.6} decisions={} avg_wait={:.6}",
            self.episode, self.total_reward, loss, self.epsilon, self.decisions, self.summary.metrics.avg_wait
        )
    }
}

/// Replay one trace through a fresh engine, then decay epsilon if training.
pub fn run_episode(
    policy: &mut RlPolicy,
    stream: JobStream,
    total_nodes: u32,
    sink: &mut dyn JobSink,
    log: &mut DebugLog,
    cfg: EngineConfig,
    episode: usize,
) -> Result<EpisodeReport> {
    let epsilon = policy.epsilon();
    let summary = Engine::new(stream, ClusterState::new(total_nodes), policy, sink, log, cfg).run()?;
    let stats = policy.take_episode_stats();
    if policy.is_training() {
        policy.decay_epsilon();
    }
    let report = EpisodeReport {
        episode,
        total_reward: stats.total_reward,
        mean_loss: stats.mean_loss(),
        epsilon,
        decisions: stats.decisions,
        summary,
    };
    log.log(Level::Rl, report.to_line())?;
    Ok(report)
}

/// Train over `episodes` full passes of an in-memory trace.
pub fn train(
    policy: &mut RlPolicy,
    records: &[JobRecord],
    total_nodes: u32,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeReport>> {
    policy.set_training(true);
    let cfg = EngineConfig { mode: Mode::RlTrain, seed, policy: policy.kind(), ..Default::default() };
    let mut log = DebugLog::disabled();
    (0..episodes)
        .map(|ep| {
            let stream = JobStream::from_records(records, 64)?;
            run_episode(policy, stream, total_nodes, &mut NullSink, &mut log, cfg, ep)
        })
        .collect()
}

/// One greedy pass over an in-memory trace; the policy is left in inference
/// mode.
pub fn evaluate(policy: &mut RlPolicy, records: &[JobRecord], total_nodes: u32, seed: u64) -> Result<Metrics> {
    policy.set_training(false);
    let cfg = EngineConfig { mode: Mode::RlInfer, seed, policy: policy.kind(), ..Default::default() };
    let mut log = DebugLog::disabled();
    let stream = JobStream::from_records(records, 64)?;
    run_episode(policy, stream, total_nodes, &mut NullSink, &mut log, cfg, 0).map(|r| r.summary.metrics)
}
