//! Event-driven simulation core.
//!
//! Events at the same timestamp are processed End → Submit → Invoke, so nodes
//! released at `t` are visible to the scheduler call at `t`, and the
//! scheduler runs once after all arrivals at `t`. The policy is invoked only
//! after Submit and End events; availability cannot change in between.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use crate::cluster::{Allocation, ClusterState};
use crate::error::{Result, SimError};
use crate::metrics::{DebugLog, Level, Metrics, MetricsAccumulator, DEFAULT_SLOWDOWN_THRESHOLD};
use crate::policy::{PolicyKind, Reservation, SchedContext, ScheduleDecision, SchedulingPolicy};
use crate::queue::{Job, JobCounts, JobQueue};
use crate::swf::{JobId, JobRecord, JobStream, ResultsWriter, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    End = 0,
    Submit = 1,
    Invoke = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: Time,
    pub kind: EventKind,
    pub job_id: Option<JobId>,
    pub seq: u64,
}

impl Event {
    fn key(&self) -> (Time, EventKind, u64) {
        (self.time, self.kind, self.seq)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-ordered event queue with at most one pending Invoke per timestamp.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    invoke_pending: Option<Time>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: Time, kind: EventKind, job_id: Option<JobId>) {
        if kind == EventKind::Invoke {
            if self.invoke_pending == Some(time) {
                return;
            }
            self.invoke_pending = Some(time);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { time, kind, job_id, seq }));
    }

    pub fn pop(&mut self) -> Option<Event> {
        let Reverse(ev) = self.heap.pop()?;
        if ev.kind == EventKind::Invoke && self.invoke_pending == Some(ev.time) {
            self.invoke_pending = None;
        }
        Some(ev)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Heuristic,
    RlTrain,
    RlInfer,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Heuristic => "heuristic",
            Mode::RlTrain => "rl-train",
            Mode::RlInfer => "rl-infer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub mode: Mode,
    pub seed: u64,
    pub policy: PolicyKind,
    pub slowdown_threshold: Time,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mode: Mode::Heuristic,
            seed: 0,
            policy: PolicyKind::Fcfs,
            slowdown_threshold: DEFAULT_SLOWDOWN_THRESHOLD,
        }
    }
}

/// Destination for finished jobs, fed in (end_time, job_id) order.
pub trait JobSink {
    fn accept(&mut self, job: &Job) -> Result<()>;
}

impl JobSink for Vec<Job> {
    fn accept(&mut self, job: &Job) -> Result<()> {
        self.push(job.clone());
        Ok(())
    }
}

impl<W: Write> JobSink for ResultsWriter<W> {
    fn accept(&mut self, job: &Job) -> Result<()> {
        self.append_finished_record(job)
    }
}

/// Drops finished jobs; metrics are still accumulated by the engine.
pub struct NullSink;

impl JobSink for NullSink {
    fn accept(&mut self, _job: &Job) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub metrics: Metrics,
    pub counts: JobCounts,
    pub busy_node_seconds: u64,
    /// Σ requested_nodes × actual_runtime over finished jobs.
    pub finished_node_seconds: u128,
    pub end_time: Time,
    pub events_processed: u64,
    pub peak_buffered: usize,
    pub malformed_lines: usize,
}

pub struct Engine<'a> {
    stream: JobStream,
    cluster: ClusterState,
    queue: JobQueue,
    events: EventQueue,
    policy: &'a mut dyn SchedulingPolicy,
    sink: &'a mut dyn JobSink,
    log: &'a mut DebugLog,
    cfg: EngineConfig,
    now: Time,
    next_job: Option<JobRecord>,
    reservations: BTreeMap<(Time, JobId), u32>,
    finishing: Vec<Job>,
    metrics: MetricsAccumulator,
    events_processed: u64,
    malformed_lines: usize,
}

impl<'a> Engine<'a> {
    pub fn new(
        stream: JobStream,
        cluster: ClusterState,
        policy: &'a mut dyn SchedulingPolicy,
        sink: &'a mut dyn JobSink,
        log: &'a mut DebugLog,
        cfg: EngineConfig,
    ) -> Self {
        Engine {
            stream,
            cluster,
            queue: JobQueue::new(),
            events: EventQueue::new(),
            policy,
            sink,
            log,
            metrics: MetricsAccumulator::new(cfg.slowdown_threshold),
            cfg,
            now: 0,
            next_job: None,
            reservations: BTreeMap::new(),
            finishing: Vec::new(),
            events_processed: 0,
            malformed_lines: 0,
        }
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn cluster(&self) -> &ClusterState {
        &self.cluster
    }

    pub fn queue(&self) -> &JobQueue {
        &self.queue
    }

    /// Process every event until the trace is exhausted and nothing is pending.
    pub fn run(mut self) -> Result<SimulationSummary> {
        if !self.events.is_empty() {
            return Err(SimError::Internal("event queue not empty at start".into()));
        }
        self.log.set_time(0);
        self.pull_next_submit()?;

        while let Some(ev) = self.events.pop() {
            if ev.time < self.now {
                return Err(SimError::Internal(format!(
                    "event {:?} at t={} popped after clock reached {}",
                    ev.kind, ev.time, self.now
                )));
            }
            if ev.time > self.now {
                self.flush_finished()?;
                self.now = ev.time;
                self.log.set_time(self.now);
            }
            self.dispatch_event(ev)?;
            self.events_processed += 1;
        }
        self.flush_finished()?;

        let counts = self.queue.counts();
        if counts.queued > 0 || counts.running > 0 {
            return Err(SimError::Internal(format!(
                "simulation stalled at t={} with {} queued and {} running jobs",
                self.now, counts.queued, counts.running
            )));
        }
        self.policy.finish(self.now, self.log)?;

        let metrics = self.metrics.finish(
            self.cluster.busy_node_seconds(),
            self.cluster.total_nodes(),
            counts.discarded,
        );
        if metrics.finished_count > 0 && metrics.makespan == 0 {
            self.log.log(Level::Warn, "makespan is 0; utilization reported as 0")?;
        }
        self.log.log_with(Level::Error, || {
            format!(
                "summary policy={} finished={} discarded={} avg_wait={} avg_bsld={} util={} makespan={}",
                self.policy.name(),
                metrics.finished_count,
                metrics.discarded_count,
                metrics.avg_wait,
                metrics.avg_bounded_slowdown,
                metrics.utilization,
                metrics.makespan
            )
        })?;
        self.log.flush()?;

        Ok(SimulationSummary {
            metrics,
            counts,
            busy_node_seconds: self.cluster.busy_node_seconds(),
            finished_node_seconds: self.metrics.node_seconds(),
            end_time: self.now,
            events_processed: self.events_processed,
            peak_buffered: self.stream.peak_buffered(),
            malformed_lines: self.malformed_lines,
        })
    }

    fn pull_next_submit(&mut self) -> Result<()> {
        let next = self.stream.next_record()?;
        for w in self.stream.take_warnings() {
            self.malformed_lines += 1;
            self.log.log_with(Level::Warn, || {
                format!("{}: skipping line {}: {}", self.stream.source(), w.line_no, w.reason)
            })?;
        }
        if let Some(rec) = next {
            if rec.submit_time < self.now {
                return Err(SimError::Internal(format!(
                    "job {} submitted at {} behind clock {}",
                    rec.job_id, rec.submit_time, self.now
                )));
            }
            self.events.push(rec.submit_time, EventKind::Submit, Some(rec.job_id));
            self.next_job = Some(rec);
        }
        Ok(())
    }

    /// Hand same-timestamp finished jobs to the sink in job_id order.
    fn flush_finished(&mut self) -> Result<()> {
        if self.finishing.is_empty() {
            return Ok(());
        }
        let mut batch = std::mem::take(&mut self.finishing);
        batch.sort_by_key(Job::id);
        for job in &batch {
            self.metrics.add(job);
            self.sink.accept(job)?;
        }
        Ok(())
    }

    pub fn dispatch_event(&mut self, ev: Event) -> Result<()> {
        let now = self.now;
        match ev.kind {
            EventKind::Submit => {
                let rec = match self.next_job.take() {
                    Some(r) if Some(r.job_id) == ev.job_id => r,
                    _ => {
                        return Err(SimError::Internal(format!(
                            "submit event for unknown job {:?}",
                            ev.job_id
                        )))
                    }
                };
                if rec.requested_nodes > self.cluster.total_nodes() {
                    self.queue.discard(&rec);
                    self.log.log_with(Level::Warn, || {
                        format!(
                            "discarding job {}: requests {} nodes, cluster has {}",
                            rec.job_id,
                            rec.requested_nodes,
                            self.cluster.total_nodes()
                        )
                    })?;
                } else {
                    self.queue.enqueue(rec, now)?;
                    self.log.log_with(Level::Event, || {
                        format!(
                            "submit job {} nodes={} requested_time={}",
                            rec.job_id, rec.requested_nodes, rec.requested_time
                        )
                    })?;
                    self.events.push(now, EventKind::Invoke, None);
                }
                self.pull_next_submit()?;
            }
            EventKind::End => {
                let id = ev
                    .job_id
                    .ok_or_else(|| SimError::Internal("end event without a job".into()))?;
                let expected_end = self
                    .queue
                    .running(id)
                    .map(|j| j.start_time().unwrap_or(0) + j.record.requested_time)
                    .ok_or_else(|| SimError::Internal(format!("end event for unknown job {id}")))?;
                self.cluster.release(id, now)?;
                let job = self.queue.mark_finished(id, now)?;
                self.reservations.remove(&(expected_end, id));
                self.log.log_with(Level::Event, || {
                    format!("end job {id} wait={}", job.wait_time().unwrap_or(0))
                })?;
                self.finishing.push(job);
                self.events.push(now, EventKind::Invoke, None);
            }
            EventKind::Invoke => {
                let running: Vec<Reservation> = self
                    .reservations
                    .iter()
                    .map(|(&(expected_end, job_id), &nodes)| Reservation { job_id, nodes, expected_end })
                    .collect();
                let ctx = SchedContext {
                    now,
                    queue: self.queue.view(),
                    free_nodes: self.cluster.free_count(),
                    total_nodes: self.cluster.total_nodes(),
                    running: &running,
                };
                let decision = self.policy.select(&ctx, self.log)?;
                if !decision.is_empty() {
                    self.log.log_with(Level::Decision, || {
                        format!(
                            "{} starts {:?} (queue {}, free {})",
                            self.policy.name(),
                            decision.jobs,
                            self.queue.view().len(),
                            self.cluster.free_count()
                        )
                    })?;
                }
                self.apply_decision(&decision, now)?;
            }
        }
        Ok(())
    }

    /// Start the decided jobs in order; returns how many were started.
    pub fn apply_decision(&mut self, decision: &ScheduleDecision, now: Time) -> Result<usize> {
        for &id in &decision.jobs {
            let rec = self
                .queue
                .queued(id)
                .map(|j| j.record)
                .ok_or_else(|| SimError::PolicyContract(format!("job {id} is not in the queue")))?;
            let nodes = match self.cluster.allocate(id, rec.requested_nodes, now)? {
                Allocation::Granted(nodes) => nodes,
                Allocation::Insufficient => {
                    return Err(SimError::PolicyContract(format!(
                        "job {id} needs {} nodes but only {} are free",
                        rec.requested_nodes,
                        self.cluster.free_count()
                    )))
                }
            };
            self.queue.mark_started(id, now, nodes)?;
            self.reservations
                .insert((now + rec.requested_time, id), rec.requested_nodes);
            self.events.push(now + rec.actual_runtime, EventKind::End, Some(id));
            self.log.log_with(Level::Event, || {
                format!("start job {id} wait={}", now - rec.submit_time)
            })?;
        }
        Ok(decision.len())
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }
}

/// Run one simulation over in-memory records, collecting finished jobs.
pub fn simulate(
    records: &[JobRecord],
    total_nodes: u32,
    policy: &mut dyn SchedulingPolicy,
) -> Result<(SimulationSummary, Vec<Job>)> {
    let stream = JobStream::from_records(records, 64)?;
    let mut finished = Vec::new();
    let mut log = DebugLog::disabled();
    let summary = Engine::new(
        stream,
        ClusterState::new(total_nodes),
        policy,
        &mut finished,
        &mut log,
        EngineConfig::default(),
    )
    .run()?;
    Ok((summary, finished))
}
