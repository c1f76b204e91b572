//! Scheduling metrics, the uniform results/summary files, and the leveled
//! debug log.
//!
//! Every policy produces the same result record, one line per finished job:
//!
//! ```text
//! job_id;submit;start;end;requested_nodes;requested_time;actual_runtime
//! ```
//!
//! which carries enough to recompute all metrics offline.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::cluster::{self, ClusterState};
use crate::error::{Result, SimError};
use crate::queue::Job;
use crate::swf::{JobRecord, Time};

/// Runtime floor used by bounded slowdown.
pub const DEFAULT_SLOWDOWN_THRESHOLD: Time = 10;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub avg_wait: f64,
    pub avg_bounded_slowdown: f64,
    pub utilization: f64,
    pub makespan: Time,
    pub finished_count: usize,
    pub discarded_count: usize,
}

pub fn format_result_record(job: &Job) -> String {
    let r = &job.record;
    format!(
        "{};{};{};{};{};{};{}",
        r.job_id,
        r.submit_time,
        job.start_time().expect("unstarted job in results"),
        job.end_time().expect("unfinished job in results"),
        r.requested_nodes,
        r.requested_time,
        r.actual_runtime
    )
}

pub fn parse_result_record(line: &str) -> Result<Job> {
    let bad = || SimError::Config(format!("malformed result record {line:?}"));
    let fields: Vec<u64> = line
        .trim()
        .split(';')
        .map(|f| f.parse::<u64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [job_id, submit, start, end, nodes, req_time, runtime] = fields[..] else {
        return Err(bad());
    };
    if end != start + runtime || start < submit {
        return Err(bad());
    }
    let record = JobRecord {
        job_id,
        submit_time: submit,
        actual_runtime: runtime,
        requested_nodes: u32::try_from(nodes).map_err(|_| bad())?,
        requested_time: req_time,
    };
    Ok(Job::finished(record, start))
}

pub fn bounded_slowdown(wait: Time, runtime: Time, threshold: Time) -> f64 {
    let denom = runtime.max(threshold).max(1);
    ((wait + runtime) as f64 / denom as f64).max(1.0)
}

/// Running totals over finished jobs, fed in completion order.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    threshold: Time,
    count: usize,
    wait_sum: u128,
    slowdown_sum: f64,
    min_submit: Option<Time>,
    max_end: Option<Time>,
    node_seconds: u128,
}

impl MetricsAccumulator {
    pub fn new(slowdown_threshold: Time) -> Self {
        MetricsAccumulator {
            threshold: slowdown_threshold,
            count: 0,
            wait_sum: 0,
            slowdown_sum: 0.0,
            min_submit: None,
            max_end: None,
            node_seconds: 0,
        }
    }

    pub fn add(&mut self, job: &Job) {
        let wait = job.wait_time().expect("unstarted job in metrics");
        let end = job.end_time().expect("unfinished job in metrics");
        let r = &job.record;
        self.count += 1;
        self.wait_sum += u128::from(wait);
        self.slowdown_sum += bounded_slowdown(wait, r.actual_runtime, self.threshold);
        self.min_submit = Some(self.min_submit.map_or(r.submit_time, |m| m.min(r.submit_time)));
        self.max_end = Some(self.max_end.map_or(end, |m| m.max(end)));
        self.node_seconds += u128::from(r.requested_nodes) * u128::from(r.actual_runtime);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn makespan(&self) -> Time {
        match (self.min_submit, self.max_end) {
            (Some(s), Some(e)) => e - s,
            _ => 0,
        }
    }

    /// Σ requested_nodes × actual_runtime over the jobs seen.
    pub fn node_seconds(&self) -> u128 {
        self.node_seconds
    }

    /// Finalize with utilization from the given busy node-seconds.
    pub fn finish(&self, busy_node_seconds: u64, total_nodes: u32, discarded: usize) -> Metrics {
        if self.count == 0 {
            return Metrics {
                discarded_count: discarded,
                ..Metrics::default()
            };
        }
        let makespan = self.makespan();
        Metrics {
            avg_wait: self.wait_sum as f64 / self.count as f64,
            avg_bounded_slowdown: self.slowdown_sum / self.count as f64,
            utilization: cluster::utilization(busy_node_seconds, total_nodes, makespan).unwrap_or(0.0),
            makespan,
            finished_count: self.count,
            discarded_count: discarded,
        }
    }
}

pub fn compute_metrics(finished: &[Job], cluster: &ClusterState, slowdown_threshold: Time) -> Metrics {
    let mut acc = MetricsAccumulator::new(slowdown_threshold);
    for job in finished {
        acc.add(job);
    }
    acc.finish(cluster.busy_node_seconds(), cluster.total_nodes(), 0)
}

/// Recompute metrics from a results file written by [`crate::swf::ResultsWriter`].
pub fn metrics_from_results(
    path: impl AsRef<Path>,
    total_nodes: u32,
    slowdown_threshold: Time,
    discarded: usize,
) -> Result<Metrics> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SimError::io(path, e))?;
    let mut acc = MetricsAccumulator::new(slowdown_threshold);
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| SimError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        acc.add(&parse_result_record(&line)?);
    }
    let busy = u64::try_from(acc.node_seconds()).map_err(|_| SimError::Internal("node-seconds overflow".into()))?;
    Ok(acc.finish(busy, total_nodes, discarded))
}

/// `key=value` summary lines; `extra` is appended verbatim in order.
pub fn write_summary(path: impl AsRef<Path>, run_name: &str, m: &Metrics, extra: &[(String, String)]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut body = format!(
        "run_name={run_name}\nfinished_count={}\ndiscarded_count={}\navg_wait={}\navg_bounded_slowdown={}\nutilization={}\nmakespan={}\n",
        m.finished_count, m.discarded_count, m.avg_wait, m.avg_bounded_slowdown, m.utilization, m.makespan
    );
    for (k, v) in extra {
        body.push_str(&format!("{k}={v}\n"));
    }
    out.write_all(body.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| SimError::io(path, e))
}

/// Debug log verbosity. A run at level L records every event of level ≤ L.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum Level {
    /// errors and the run summary
    Error = 1,
    Warn = 2,
    /// scheduler decisions
    Decision = 3,
    /// event lifecycle: submit, start, end
    Event = 4,
    /// RL internals: losses, epsilon, chosen actions
    Rl = 5,
}

impl Level {
    pub fn from_u8(v: u8) -> Option<Level> {
        Some(match v {
            1 => Level::Error,
            2 => Level::Warn,
            3 => Level::Decision,
            4 => Level::Event,
            5 => Level::Rl,
            _ => return None,
        })
    }

    fn tag(self) -> &'static str {
        match self {
            Level::Error => "MAIN",
            Level::Warn => "WARN",
            Level::Decision => "SCHED",
            Level::Event => "EVENT",
            Level::Rl => "RL",
        }
    }
}

enum Sink {
    Off,
    Writer(Box<dyn Write>),
    Memory(Vec<String>),
}

pub struct DebugLog {
    threshold: Level,
    sink: Sink,
    path: PathBuf,
    now: Time,
}

impl DebugLog {
    /// A log that drops everything.
    pub fn disabled() -> Self {
        DebugLog {
            threshold: Level::Error,
            sink: Sink::Off,
            path: PathBuf::new(),
            now: 0,
        }
    }

    pub fn create(path: impl Into<PathBuf>, threshold: Level) -> Result<Self> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| SimError::io(&path, e))?;
        Ok(DebugLog {
            threshold,
            sink: Sink::Writer(Box::new(BufWriter::new(file))),
            path,
            now: 0,
        })
    }

    /// Keep lines in memory; see [`DebugLog::lines`].
    pub fn memory(threshold: Level) -> Self {
        DebugLog {
            threshold,
            sink: Sink::Memory(Vec::new()),
            path: PathBuf::from("<memory>"),
            now: 0,
        }
    }

    pub fn threshold(&self) -> Level {
        self.threshold
    }

    pub fn set_time(&mut self, now: Time) {
        self.now = now;
    }

    pub fn enabled(&self, level: Level) -> bool {
        !matches!(self.sink, Sink::Off) && level <= self.threshold
    }

    pub fn log(&mut self, level: Level, event: impl fmt::Display) -> Result<()> {
        if !self.enabled(level) {
            return Ok(());
        }
        let line = format!("[t={}] {} {}", self.now, level.tag(), event);
        match &mut self.sink {
            Sink::Off => Ok(()),
            Sink::Memory(lines) => {
                lines.push(line);
                Ok(())
            }
            Sink::Writer(w) => writeln!(w, "{line}").map_err(|e| SimError::io(&self.path, e)),
        }
    }

    /// Like [`DebugLog::log`] but only formats when the level is enabled.
    pub fn log_with(&mut self, level: Level, event: impl FnOnce() -> String) -> Result<()> {
        if self.enabled(level) {
            self.log(level, event())
        } else {
            Ok(())
        }
    }

    pub fn lines(&self) -> &[String] {
        match &self.sink {
            Sink::Memory(l) => l,
            _ => &[],
        }
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Sink::Writer(w) = &mut self.sink {
            w.flush().map_err(|e| SimError::io(&self.path, e))?;
        }
        Ok(())
    }
}

impl Drop for DebugLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
