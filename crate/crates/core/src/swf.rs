//! Standard Workload Format (SWF) traces.
//!
//! Job traces are read through [`JobStream`], a cursor that parses at most
//! `window` records ahead of the consumer so memory stays flat no matter how
//! long the trace is. Finished jobs leave the simulator through
//! [`ResultsWriter`] as soon as they complete.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, SimError};
use crate::metrics::format_result_record;
use crate::queue::Job;

pub type JobId = u64;
/// Simulation time in whole seconds.
pub type Time = u64;

/// Number of whitespace-separated fields in an SWF job line.
pub const SWF_FIELDS: usize = 18;

/// Static trace fields of one batch job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JobRecord {
    pub job_id: JobId,
    pub submit_time: Time,
    pub actual_runtime: Time,
    pub requested_nodes: u32,
    pub requested_time: Time,
}

impl JobRecord {
    /// Serialize into an 18-field SWF line. Unused fields are `-1`.
    pub fn to_swf_line(&self) -> String {
        format!(
            "{} {} -1 {} {} -1 -1 {} {} -1 1 -1 -1 -1 -1 -1 -1 -1",
            self.job_id,
            self.submit_time,
            self.actual_runtime,
            self.requested_nodes,
            self.requested_nodes,
            self.requested_time
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterConfig {
    pub total_nodes: u32,
    pub name: String,
}

/// Classification of one non-malformed SWF line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SwfLine {
    /// `;` header/comment line, or a blank line.
    Comment,
    Record(JobRecord),
}

/// A line that could not be turned into a job. The simulation skips it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedLine {
    pub line_no: usize,
    pub reason: String,
}

pub fn parse_swf_line(line: &str, line_no: usize) -> Result<SwfLine, MalformedLine> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with(';') {
        return Ok(SwfLine::Comment);
    }
    let malformed = |reason: String| MalformedLine { line_no, reason };

    let fields: Vec<&str> = trimmed.split_whitespace().collect();
    if fields.len() < SWF_FIELDS {
        return Err(malformed(format!(
            "expected {SWF_FIELDS} fields, found {}",
            fields.len()
        )));
    }
    for (i, f) in fields.iter().enumerate() {
        if f.parse::<f64>().is_err() {
            return Err(malformed(format!("field {} is not numeric: {f:?}", i + 1)));
        }
    }
    // 1-based SWF field numbers
    let int = |n: usize| -> Result<i64, MalformedLine> {
        let raw = fields[n - 1];
        raw.parse::<i64>().or_else(|_| {
            let v: f64 = raw.parse().unwrap_or(f64::NAN);
            if v.fract() == 0.0 && v.is_finite() {
                Ok(v as i64)
            } else {
                Err(malformed(format!("field {n} is not an integer: {raw:?}")))
            }
        })
    };

    let job_id = int(1)?;
    let submit = int(2)?;
    let runtime = int(4)?;
    let alloc_procs = int(5)?;
    let req_procs = int(8)?;
    let req_time = int(9)?;

    if job_id <= 0 {
        return Err(malformed(format!("job number {job_id} is not positive")));
    }
    if submit < 0 {
        return Err(malformed(format!("negative submit time {submit}")));
    }
    if runtime < 0 {
        return Err(malformed(format!("run time {runtime} is unknown")));
    }
    let nodes = if req_procs > 0 { req_procs } else { alloc_procs };
    if nodes <= 0 {
        return Err(malformed("node count is unknown".into()));
    }
    let nodes = u32::try_from(nodes).map_err(|_| malformed(format!("node count {nodes} too large")))?;
    // a zero-length job without an estimate still needs a walltime of 1 s
    let requested_time = if req_time > 0 { req_time } else { runtime.max(1) };

    Ok(SwfLine::Record(JobRecord {
        job_id: job_id as u64,
        submit_time: submit as u64,
        actual_runtime: runtime as u64,
        requested_nodes: nodes,
        requested_time: requested_time as u64,
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LineCounts {
    pub lines: usize,
    pub records: usize,
    pub comments: usize,
    pub malformed: usize,
}

/// Streaming cursor over an SWF trace.
pub struct JobStream {
    reader: Box<dyn BufRead>,
    source: String,
    window: usize,
    buffer: VecDeque<JobRecord>,
    peak_buffered: usize,
    last_submit: Option<Time>,
    exhausted: bool,
    counts: LineCounts,
    warnings: Vec<MalformedLine>,
    line: String,
}

impl JobStream {
    pub fn open(path: impl AsRef<Path>, window: usize) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| {
            SimError::Config(format!("cannot open trace {}: {e}", path.display()))
        })?;
        Self::from_reader(BufReader::new(file), window, path.display().to_string())
    }

    pub fn from_reader(
        reader: impl BufRead + 'static,
        window: usize,
        source: impl Into<String>,
    ) -> Result<Self> {
        if window == 0 {
            return Err(SimError::Config("trace window must be at least 1".into()));
        }
        Ok(JobStream {
            reader: Box::new(reader),
            source: source.into(),
            window,
            buffer: VecDeque::with_capacity(window),
            peak_buffered: 0,
            last_submit: None,
            exhausted: false,
            counts: LineCounts::default(),
            warnings: Vec::new(),
            line: String::new(),
        })
    }

    /// Stream over an in-memory trace, serialized to SWF text first.
    pub fn from_records(records: &[JobRecord], window: usize) -> Result<Self> {
        let mut text = String::from("; in-memory trace\n");
        for r in records {
            text.push_str(&r.to_swf_line());
            text.push('\n');
        }
        Self::from_reader(Cursor::new(text.into_bytes()), window, "<memory>")
    }

    pub fn next_record(&mut self) -> Result<Option<JobRecord>> {
        if self.buffer.is_empty() && !self.exhausted {
            self.fill()?;
        }
        Ok(self.buffer.pop_front())
    }

    fn fill(&mut self) -> Result<()> {
        while self.buffer.len() < self.window {
            self.line.clear();
            let n = self
                .reader
                .read_line(&mut self.line)
                .map_err(|e| SimError::io(&self.source, e))?;
            if n == 0 {
                self.exhausted = true;
                break;
            }
            self.counts.lines += 1;
            match parse_swf_line(&self.line, self.counts.lines) {
                Ok(SwfLine::Comment) => self.counts.comments += 1,
                Ok(SwfLine::Record(rec)) => {
                    if let Some(prev) = self.last_submit {
                        if rec.submit_time < prev {
                            return Err(SimError::Trace {
                                job_id: rec.job_id,
                                msg: format!(
                                    "submit time {} precedes earlier submit time {prev} in {}",
                                    rec.submit_time, self.source
                                ),
                            });
                        }
                    }
                    self.last_submit = Some(rec.submit_time);
                    self.counts.records += 1;
                    self.buffer.push_back(rec);
                    self.peak_buffered = self.peak_buffered.max(self.buffer.len());
                }
                Err(bad) => {
                    self.counts.malformed += 1;
                    self.warnings.push(bad);
                }
            }
        }
        Ok(())
    }

    /// Largest number of parsed-but-unconsumed records held at once.
    pub fn peak_buffered(&self) -> usize {
        self.peak_buffered
    }

    pub fn counts(&self) -> LineCounts {
        self.counts
    }

    /// Malformed-line warnings collected since the last call.
    pub fn take_warnings(&mut self) -> Vec<MalformedLine> {
        std::mem::take(&mut self.warnings)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl Iterator for JobStream {
    type Item = Result<JobRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

/// Write records as an SWF trace with the given header lines (without `;`).
pub fn write_trace<'a, W: Write>(
    mut out: W,
    header: &[String],
    records: impl IntoIterator<Item = &'a JobRecord>,
) -> io::Result<()> {
    for h in header {
        writeln!(out, "; {h}")?;
    }
    for r in records {
        writeln!(out, "{}", r.to_swf_line())?;
    }
    out.flush()
}

/// Read `; Key: Value` header directives, case-insensitive on the key.
fn directive<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let body = line.trim().strip_prefix(';')?.trim();
    let (k, v) = body.split_once(':')?;
    k.trim().eq_ignore_ascii_case(key).then(|| v.trim())
}

pub fn parse_node_structure(path: impl AsRef<Path>) -> Result<ClusterConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        SimError::Config(format!("cannot read node structure {}: {e}", path.display()))
    })?;
    let fallback = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_node_structure_str(&text, &fallback)
}

pub fn parse_node_structure_str(text: &str, fallback_name: &str) -> Result<ClusterConfig> {
    let mut max_nodes = None;
    let mut max_procs = None;
    let mut name = None;
    for line in text.lines() {
        if let Some(v) = directive(line, "MaxNodes") {
            max_nodes.get_or_insert(v);
        } else if let Some(v) = directive(line, "MaxProcs") {
            max_procs.get_or_insert(v);
        } else if let Some(v) = directive(line, "Computer") {
            name.get_or_insert(v);
        }
    }
    let (key, raw) = match (max_nodes, max_procs) {
        (Some(v), _) => ("MaxNodes", v),
        (None, Some(v)) => ("MaxProcs", v),
        (None, None) => {
            return Err(SimError::Config(
                "node structure has neither a MaxNodes nor a MaxProcs directive".into(),
            ))
        }
    };
    let total: i64 = raw
        .parse()
        .map_err(|_| SimError::Config(format!("{key} value {raw:?} is not an integer")))?;
    if total <= 0 || total > u32::MAX as i64 {
        return Err(SimError::Config(format!("{key} must be positive, got {total}")));
    }
    Ok(ClusterConfig {
        total_nodes: total as u32,
        name: name.unwrap_or(fallback_name).to_string(),
    })
}

/// Appends finished-job records to a results file.
pub struct ResultsWriter<W: Write = BufWriter<File>> {
    out: W,
    path: PathBuf,
    last: Option<(Time, JobId)>,
    written: usize,
}

impl ResultsWriter {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| SimError::io(&path, e))?;
        Ok(ResultsWriter::new(BufWriter::new(file), path))
    }
}

impl<W: Write> ResultsWriter<W> {
    pub fn new(out: W, path: impl Into<PathBuf>) -> Self {
        ResultsWriter {
            out,
            path: path.into(),
            last: None,
            written: 0,
        }
    }

    /// Append one line for a finished job.
    ///
    /// Panics if the job is not finished or arrives out of (end, id) order.
    pub fn append_finished_record(&mut self, job: &Job) -> Result<()> {
        let end = job
            .end_time()
            .unwrap_or_else(|| panic!("job {} is not finished", job.id()));
        let key = (end, job.id());
        if let Some(last) = self.last {
            assert!(key > last, "results out of order: {key:?} after {last:?}");
        }
        self.last = Some(key);
        writeln!(self.out, "{}", format_result_record(job))
            .map_err(|e| SimError::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush().map_err(|e| SimError::io(&self.path, e))?;
        Ok(self.out)
    }
}
