//! Waiting queue and job lifecycle (queued → running → finished).

use std::collections::{BTreeMap, HashMap};

use crate::cluster::NodeId;
use crate::error::{Result, SimError};
use crate::swf::{JobId, JobRecord, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobStatus {
    Queued,
    Running,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub record: JobRecord,
    status: JobStatus,
    start_time: Option<Time>,
    end_time: Option<Time>,
    allocated_nodes: Option<Vec<NodeId>>,
}

impl Job {
    pub fn new(record: JobRecord) -> Self {
        Job {
            record,
            status: JobStatus::Queued,
            start_time: None,
            end_time: None,
            allocated_nodes: None,
        }
    }

    pub fn id(&self) -> JobId {
        self.record.job_id
    }

    pub fn status(&self) -> JobStatus {
        self.status
    }

    pub fn submit_time(&self) -> Time {
        self.record.submit_time
    }

    pub fn start_time(&self) -> Option<Time> {
        self.start_time
    }

    pub fn end_time(&self) -> Option<Time> {
        self.end_time
    }

    pub fn allocated_nodes(&self) -> Option<&[NodeId]> {
        self.allocated_nodes.as_deref()
    }

    /// start − submit, once started.
    pub fn wait_time(&self) -> Option<Time> {
        self.start_time.map(|s| s - self.record.submit_time)
    }

    /// Time spent waiting so far, for a job still in the queue.
    pub fn waited_until(&self, now: Time) -> Time {
        now.saturating_sub(self.record.submit_time)
    }

    /// Build a finished job directly, e.g. when re-reading a results file.
    pub fn finished(record: JobRecord, start: Time) -> Self {
        Job {
            record,
            status: JobStatus::Finished,
            start_time: Some(start),
            end_time: Some(start + record.actual_runtime),
            allocated_nodes: None,
        }
    }
}

/// Read-only ordered snapshot of the waiting jobs, by (submit_time, job_id).
#[derive(Clone, Copy)]
pub struct QueueView<'a> {
    jobs: &'a BTreeMap<(Time, JobId), Job>,
}

impl<'a> QueueView<'a> {
    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &'a Job> + 'a {
        self.jobs.values()
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn ids(&self) -> Vec<JobId> {
        self.iter().map(Job::id).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JobCounts {
    pub read: usize,
    pub queued: usize,
    pub running: usize,
    pub finished: usize,
    pub discarded: usize,
}

#[derive(Debug, Default)]
pub struct JobQueue {
    queued: BTreeMap<(Time, JobId), Job>,
    queued_at: HashMap<JobId, Time>,
    running: HashMap<JobId, Job>,
    read: usize,
    finished: usize,
    discarded: usize,
}

impl JobQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, record: JobRecord, now: Time) -> Result<()> {
        let id = record.job_id;
        if self.queued_at.contains_key(&id) || self.running.contains_key(&id) {
            return Err(SimError::Trace {
                job_id: id,
                msg: "duplicate job id".into(),
            });
        }
        if now != record.submit_time {
            return Err(SimError::Internal(format!(
                "job {id} enqueued at {now}, submitted at {}",
                record.submit_time
            )));
        }
        self.read += 1;
        self.queued_at.insert(id, record.submit_time);
        self.queued.insert((record.submit_time, id), Job::new(record));
        Ok(())
    }

    /// Count a job that was read but can never run.
    pub fn discard(&mut self, _record: &JobRecord) {
        self.read += 1;
        self.discarded += 1;
    }

    pub fn view(&self) -> QueueView<'_> {
        QueueView { jobs: &self.queued }
    }

    pub fn queued(&self, id: JobId) -> Option<&Job> {
        let submit = *self.queued_at.get(&id)?;
        self.queued.get(&(submit, id))
    }

    pub fn running(&self, id: JobId) -> Option<&Job> {
        self.running.get(&id)
    }

    pub fn running_jobs(&self) -> impl Iterator<Item = &Job> {
        self.running.values()
    }

    pub fn mark_started(&mut self, id: JobId, start: Time, nodes: Vec<NodeId>) -> Result<()> {
        let submit = self
            .queued_at
            .get(&id)
            .copied()
            .ok_or_else(|| SimError::Internal(format!("job {id} is not queued")))?;
        if start < submit {
            return Err(SimError::Internal(format!(
                "job {id} started at {start} before its submit time {submit}"
            )));
        }
        self.queued_at.remove(&id);
        let mut job = self.queued.remove(&(submit, id)).expect("queue index out of sync");
        job.status = JobStatus::Running;
        job.start_time = Some(start);
        job.allocated_nodes = Some(nodes);
        self.running.insert(id, job);
        Ok(())
    }

    pub fn mark_finished(&mut self, id: JobId, end: Time) -> Result<Job> {
        let job = self
            .running
            .get(&id)
            .ok_or_else(|| SimError::Internal(format!("job {id} is not running")))?;
        let expected = job.start_time.expect("running job without start") + job.record.actual_runtime;
        if end != expected {
            return Err(SimError::Internal(format!(
                "job {id} finishing at {end}, expected {expected}"
            )));
        }
        let mut job = self.running.remove(&id).expect("checked above");
        job.status = JobStatus::Finished;
        job.end_time = Some(end);
        self.finished += 1;
        Ok(job)
    }

    pub fn counts(&self) -> JobCounts {
        JobCounts {
            read: self.read,
            queued: self.queued.len(),
            running: self.running.len(),
            finished: self.finished,
            discarded: self.discarded,
        }
    }
}

impl JobCounts {
    /// read = queued + running + finished + discarded
    pub fn conserved(&self) -> bool {
        self.read == self.queued + self.running + self.finished + self.discarded
    }
}
