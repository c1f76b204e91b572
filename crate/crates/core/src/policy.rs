//! Scheduling policy plug-in interface and the heuristic policies.
//!
//! A policy sees a consistent snapshot of the waiting queue and the cluster
//! and returns the jobs to start now, in order. The engine starts them in that
//! order, so every decision must be prefix-feasible: each job has to fit in
//! the nodes left over by the jobs before it.

use std::cmp::Reverse;
use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SimError};
use crate::metrics::DebugLog;
use crate::queue::{Job, QueueView};
use crate::swf::{JobId, Time};

/// Upper bound on a running job's end, from its requested walltime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reservation {
    pub job_id: JobId,
    pub nodes: u32,
    pub expected_end: Time,
}

/// What a policy may look at during one invocation.
#[derive(Clone, Copy)]
pub struct SchedContext<'a> {
    pub now: Time,
    pub queue: QueueView<'a>,
    pub free_nodes: u32,
    pub total_nodes: u32,
    /// Running jobs, sorted by (expected_end, job_id).
    pub running: &'a [Reservation],
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScheduleDecision {
    pub jobs: Vec<JobId>,
}

impl ScheduleDecision {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }
}

impl From<Vec<JobId>> for ScheduleDecision {
    fn from(jobs: Vec<JobId>) -> Self {
        ScheduleDecision { jobs }
    }
}

pub trait SchedulingPolicy {
    fn name(&self) -> &str;

    fn select(&mut self, ctx: &SchedContext<'_>, log: &mut DebugLog) -> Result<ScheduleDecision>;

    /// Called once when the simulation has drained.
    fn finish(&mut self, _now: Time, _log: &mut DebugLog) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    Fcfs,
    Sjf,
    Ljf,
    Easy,
    Dqn,
    Pg,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Fcfs,
        PolicyKind::Sjf,
        PolicyKind::Ljf,
        PolicyKind::Easy,
        PolicyKind::Dqn,
        PolicyKind::Pg,
    ];

    pub fn is_rl(self) -> bool {
        matches!(self, PolicyKind::Dqn | PolicyKind::Pg)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Fcfs => "fcfs",
            PolicyKind::Sjf => "sjf",
            PolicyKind::Ljf => "ljf",
            PolicyKind::Easy => "easy",
            PolicyKind::Dqn => "dqn",
            PolicyKind::Pg => "pg",
        }
    }

    /// Instantiate a heuristic policy; `None` for the RL kinds.
    pub fn heuristic(self) -> Option<Box<dyn SchedulingPolicy>> {
        Some(match self {
            PolicyKind::Fcfs => Box::new(Fcfs),
            PolicyKind::Sjf => Box::new(Sjf),
            PolicyKind::Ljf => Box::new(Ljf),
            PolicyKind::Easy => Box::new(EasyBackfill),
            PolicyKind::Dqn | PolicyKind::Pg => return None,
        })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                SimError::Usage(format!(
                    "unknown policy {s:?}; expected one of fcfs, sjf, ljf, easy, dqn, pg"
                ))
            })
    }
}

/// Start jobs in the given order until the first one that does not fit.
fn walk_until_blocked<'a>(jobs: impl IntoIterator<Item = &'a Job>, mut free: u32) -> ScheduleDecision {
    let mut picked = Vec::new();
    for job in jobs {
        let n = job.record.requested_nodes;
        if n > free {
            break;
        }
        free -= n;
        picked.push(job.id());
    }
    picked.into()
}

pub fn fcfs_select(view: QueueView<'_>, free_nodes: u32, _now: Time) -> ScheduleDecision {
    walk_until_blocked(view.iter(), free_nodes)
}

pub fn sjf_select(view: QueueView<'_>, free_nodes: u32, _now: Time) -> ScheduleDecision {
    shortest_first(view.iter().collect(), free_nodes)
}

pub fn ljf_select(view: QueueView<'_>, free_nodes: u32, _now: Time) -> ScheduleDecision {
    longest_first(view.iter().collect(), free_nodes)
}

fn shortest_first(mut jobs: Vec<&Job>, free_nodes: u32) -> ScheduleDecision {
    jobs.sort_by_key(|j| (j.record.requested_time, j.submit_time(), j.id()));
    walk_until_blocked(jobs, free_nodes)
}

fn longest_first(mut jobs: Vec<&Job>, free_nodes: u32) -> ScheduleDecision {
    jobs.sort_by_key(|j| (Reverse(j.record.requested_time), j.submit_time(), j.id()));
    walk_until_blocked(jobs, free_nodes)
}

/// Earliest time `needed` nodes are guaranteed free, and the nodes left over
/// at that time. `running` must be sorted by expected end. Jobs that have
/// outlived their requested walltime are assumed to end now.
pub fn shadow_time(needed: u32, free_nodes: u32, now: Time, running: &[Reservation]) -> Option<(Time, u32)> {
    if needed <= free_nodes {
        return Some((now, free_nodes - needed));
    }
    let mut avail = free_nodes;
    for r in running {
        avail += r.nodes;
        if avail >= needed {
            return Some((r.expected_end.max(now), avail - needed));
        }
    }
    None
}

pub fn easy_backfill_select(
    view: QueueView<'_>,
    free_nodes: u32,
    now: Time,
    running: &[Reservation],
) -> ScheduleDecision {
    let mut free = free_nodes;
    let mut picked = Vec::new();
    let mut reservations: Vec<Reservation> = running.to_vec();
    let mut jobs = view.iter();

    let head = loop {
        let Some(job) = jobs.next() else {
            return picked.into();
        };
        let n = job.record.requested_nodes;
        if n > free {
            break job;
        }
        free -= n;
        picked.push(job.id());
        reservations.push(Reservation {
            job_id: job.id(),
            nodes: n,
            expected_end: now + job.record.requested_time,
        });
    };

    reservations.sort_by_key(|r| (r.expected_end, r.job_id));
    let Some((shadow, mut extra)) = shadow_time(head.record.requested_nodes, free, now, &reservations) else {
        return picked.into();
    };

    for job in jobs {
        if free == 0 {
            break;
        }
        let n = job.record.requested_nodes;
        if n > free {
            continue;
        }
        if now + job.record.requested_time <= shadow {
            free -= n;
            picked.push(job.id());
        } else if n <= extra {
            free -= n;
            extra -= n;
            picked.push(job.id());
        }
    }
    picked.into()
}

macro_rules! heuristic_policy {
    ($ty:ident, $name:literal, |$ctx:ident| $body:expr) => {
        #[derive(Debug, Clone, Copy, Default)]
        pub struct $ty;

        impl SchedulingPolicy for $ty {
            fn name(&self) -> &str {
                $name
            }

            fn select(&mut self, $ctx: &SchedContext<'_>, _log: &mut DebugLog) -> Result<ScheduleDecision> {
                Ok($body)
            }
        }
    };
}

heuristic_policy!(Fcfs, "fcfs", |ctx| fcfs_select(ctx.queue, ctx.free_nodes, ctx.now));
heuristic_policy!(Sjf, "sjf", |ctx| sjf_select(ctx.queue, ctx.free_nodes, ctx.now));
heuristic_policy!(Ljf, "ljf", |ctx| ljf_select(ctx.queue, ctx.free_nodes, ctx.now));
heuristic_policy!(EasyBackfill, "easy", |ctx| easy_backfill_select(
    ctx.queue,
    ctx.free_nodes,
    ctx.now,
    ctx.running
));
