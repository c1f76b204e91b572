//! Event-driven simulator for batch job scheduling on HPC clusters.
//!
//! Jobs are replayed from SWF traces through a discrete-event engine
//! ([`engine`]) that calls a pluggable [`policy::SchedulingPolicy`] whenever
//! jobs arrive or finish. Heuristic policies (FCFS, SJF, LJF, EASY backfill)
//! live in [`policy`]; trainable deep Q-learning and policy-gradient agents
//! live in [`rl`].

pub mod cli;
pub mod cluster;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod queue;
pub mod rl;
pub mod synth;
pub mod swf;

pub use error::{Result, SimError};
