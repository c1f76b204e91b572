//! Command-line front end: argument parsing, config-folder loading and run
//! orchestration.
//!
//! Every setting resolves field by field with the precedence
//! command-line flag > config file > built-in default, and the summary file
//! records which of the three decided each value.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::Parser;

use crate::cluster::ClusterState;
use crate::engine::{Engine, EngineConfig, Mode, NullSink, SimulationSummary};
use crate::error::{Result, SimError};
use crate::metrics::{write_summary, DebugLog, Level, DEFAULT_SLOWDOWN_THRESHOLD};
use crate::policy::PolicyKind;
use crate::rl::checkpoint::{set_field, Algorithm, Checkpoint};
use crate::rl::{run_episode, Agent, EpisodeReport, Hyperparameters, RlPolicy};
use crate::swf::{parse_node_structure, ClusterConfig, JobStream, ResultsWriter, Time};

pub const SIM_CONF: &str = "sim.conf";
pub const RL_CONF: &str = "rl.conf";
pub const DEFAULT_STREAM_WINDOW: usize = 64;

#[derive(Parser, Debug, Clone, Default)]
#[command(name = "batchsim", version, about = "Event-driven batch scheduling simulator with heuristic and RL policies")]
pub struct Args {
    /// Job trace in SWF
    #[arg(short = 'j', long = "job_log", value_name = "TRACE")]
    pub job_log: PathBuf,

    /// Node structure file (SWF header with MaxNodes or MaxProcs)
    #[arg(short = 'n', long = "node_structure", value_name = "NODEFILE")]
    pub node_structure: PathBuf,

    /// 1 trains an RL policy, 0 runs a trained one
    #[arg(long = "is_training", value_parser = clap::value_parser!(u8).range(0..=1))]
    pub is_training: Option<u8>,

    /// fcfs, sjf, ljf, easy, dqn or pg
    #[arg(long)]
    pub policy: Option<String>,

    #[arg(long = "debug_lvl", value_parser = clap::value_parser!(u8).range(1..=5))]
    pub debug_lvl: Option<u8>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Directory receiving Results/ and Debug/
    #[arg(long = "output_dir")]
    pub output_dir: Option<PathBuf>,

    #[arg(long = "config_dir", default_value = "Config")]
    pub config_dir: PathBuf,

    /// Checkpoint to write after training or to load for inference
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Maximum number of trace records held in memory
    #[arg(long = "stream_window")]
    pub stream_window: Option<usize>,

    #[arg(long = "slowdown_threshold")]
    pub slowdown_threshold: Option<u64>,

    #[arg(long = "learning_rate")]
    pub learning_rate: Option<f64>,
    #[arg(long = "batch_size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long = "epsilon_decay")]
    pub epsilon_decay: Option<f64>,
    #[arg(long = "epsilon_min")]
    pub epsilon_min: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long = "window_k")]
    pub window_k: Option<usize>,
    /// Comma-separated hidden layer widths, e.g. 64,64
    #[arg(long = "hidden_sizes")]
    pub hidden_sizes: Option<String>,
    #[arg(long = "replay_capacity")]
    pub replay_capacity: Option<usize>,
    #[arg(long = "target_sync_every")]
    pub target_sync_every: Option<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
}

impl Args {
    /// Flag values as text, keyed like the config files.
    fn flag_values(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k, v);
            }
        };
        put("is_training", self.is_training.map(|v| v.to_string()));
        put("policy", self.policy.clone());
        put("debug_lvl", self.debug_lvl.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("output_dir", self.output_dir.as_ref().map(|p| p.display().to_string()));
        put("checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string()));
        put("stream_window", self.stream_window.map(|v| v.to_string()));
        put("slowdown_threshold", self.slowdown_threshold.map(|v| v.to_string()));
        put("learning_rate", self.learning_rate.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("epsilon", self.epsilon.map(|v| v.to_string()));
        put("epsilon_decay", self.epsilon_decay.map(|v| v.to_string()));
        put("epsilon_min", self.epsilon_min.map(|v| v.to_string()));
        put("gamma", self.gamma.map(|v| v.to_string()));
        put("window_k", self.window_k.map(|v| v.to_string()));
        put("hidden_sizes", self.hidden_sizes.clone());
        put("replay_capacity", self.replay_capacity.map(|v| v.to_string()));
        put("target_sync_every", self.target_sync_every.map(|v| v.to_string()));
        put("episodes", self.episodes.map(|v| v.to_string()));
        m
    }
}

const SIM_KEYS: [&str; 8] = [
    "policy",
    "is_training",
    "debug_lvl",
    "seed",
    "output_dir",
    "checkpoint",
    "stream_window",
    "slowdown_threshold",
];

fn is_known_key(k: &str) -> bool {
    SIM_KEYS.contains(&k) || Hyperparameters::default().fields().iter().any(|(name, _)| *name == k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Flag,
    File,
    Default,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Flag => "flag",
            Source::File => "file",
            Source::Default => "default",
        })
    }
}

/// Values read from the config folder, with the file each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialConfig {
    pub values: BTreeMap<String, (String, PathBuf)>,
    pub warnings: Vec<String>,
}

/// Parse one flat `key = value` file. `#` starts a comment line.
pub fn parse_conf(text: &str, path: &Path, into: &mut PartialConfig) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(SimError::Config(format!("{}:{}: expected `key = value`, found {line:?}", path.display(), i + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if !is_known_key(k) {
            into.warnings.push(format!("{}:{}: unknown key {k:?} ignored", path.display(), i + 1));
            continue;
        }
        into.values.insert(k.to_string(), (v.to_string(), path.to_path_buf()));
    }
    Ok(())
}

/// Read `sim.conf` and `rl.conf` from `dir`. Missing files (or a missing
/// folder) contribute nothing.
pub fn load_config(dir: &Path) -> Result<PartialConfig> {
    let mut cfg = PartialConfig::default();
    for name in [SIM_CONF, RL_CONF] {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        parse_conf(&text, &path, &mut cfg)?;
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub trace_path: PathBuf,
    pub node_path: PathBuf,
    pub policy: PolicyKind,
    pub mode: Mode,
    pub debug_lvl: Level,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub stream_window: usize,
    pub slowdown_threshold: Time,
    pub hp: Hyperparameters,
    /// Which layer decided each field.
    pub sources: BTreeMap<&'static str, Source>,
    /// Config warnings, emitted at level 2 once the log is open.
    pub warnings: Vec<String>,
}

impl ResolvedConfig {
    pub fn run_name(&self) -> String {
        let stem = self.trace_path.file_stem().map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned());
        format!("{stem}_{}_s{}", self.policy, self.seed)
    }

    pub fn results_dir(&self) -> PathBuf {
        self.output_dir.join("Results")
    }

    pub fn debug_dir(&self) -> PathBuf {
        self.output_dir.join("Debug")
    }

    pub fn results_path(&self) -> PathBuf {
        self.results_dir().join(format!("{}.rst", self.run_name()))
    }

    pub fn summary_path(&self) -> PathBuf {
        self.results_dir().join(format!("{}.summary.txt", self.run_name()))
    }

    pub fn training_log_path(&self) -> PathBuf {
        self.results_dir().join(format!("{}.train", self.run_name()))
    }

    pub fn debug_path(&self) -> PathBuf {
        self.debug_dir().join(format!("{}.log", self.run_name()))
    }

    /// Where training writes its checkpoint when `--checkpoint` is absent.
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.results_dir().join(format!("{}.ckpt", self.run_name())))
    }

    fn engine_config(&self) -> EngineConfig {
        EngineConfig { mode: self.mode, seed: self.seed, policy: self.policy, slowdown_threshold: self.slowdown_threshold }
    }

    /// Resolved settings echoed into the summary, with their sources.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("config.trace".to_string(), self.trace_path.display().to_string()),
            ("config.nodes".to_string(), self.node_path.display().to_string()),
        ];
        let mut push = |k: &'static str, v: String| {
            out.push((format!("config.{k}"), v));
            let src = self.sources.get(k).copied().unwrap_or(Source::Default);
            out.push((format!("source.{k}"), src.to_string()));
        };
        push("policy", self.policy.to_string());
        push("is_training", u8::from(self.mode == Mode::RlTrain).to_string());
        push("debug_lvl", (self.debug_lvl as u8).to_string());
        push("seed", self.seed.to_string());
        push("output_dir", self.output_dir.display().to_string());
        push("checkpoint", self.checkpoint.as_ref().map_or_else(String::new, |p| p.display().to_string()));
        push("stream_window", self.stream_window.to_string());
        push("slowdown_threshold", self.slowdown_threshold.to_string());
        for (k, v) in self.hp.fields() {
            push(k, v);
        }
        out.push(("mode".to_string(), self.mode.as_str().to_string()));
        out
    }
}

/// One field's winning value and where it came from.
struct Layered<'a> {
    flags: BTreeMap<&'static str, String>,
    file: &'a PartialConfig,
    sources: BTreeMap<&'static str, Source>,
}

impl Layered<'_> {
    fn raw(&mut self, key: &'static str) -> Option<(String, String)> {
        if let Some(v) = self.flags.get(key) {
            self.sources.insert(key, Source::Flag);
            return Some((v.clone(), format!("--{key}")));
        }
        if let Some((v, path)) = self.file.values.get(key) {
            self.sources.insert(key, Source::File);
            return Some((v.clone(), format!("{key} in {}", path.display())));
        }
        self.sources.insert(key, Source::Default);
        None
    }

    fn get<T: FromStr>(&mut self, key: &'static str, default: T) -> Result<T> {
        match self.raw(key) {
            Some((v, origin)) => v.parse().map_err(|_| SimError::Usage(format!("{origin}: cannot parse {v:?}"))),
            None => Ok(default),
        }
    }
}

/// Combine flags, config files and defaults, then validate.
pub fn resolve(args: &Args, file: &PartialConfig) -> Result<ResolvedConfig> {
    let mut l = Layered { flags: args.flag_values(), file, sources: BTreeMap::new() };
    let mut warnings = file.warnings.clone();

    let policy: PolicyKind = match l.raw("policy") {
        Some((v, origin)) => v.parse().map_err(|e: SimError| SimError::Usage(format!("{origin}: {e}")))?,
        None => PolicyKind::Fcfs,
    };
    let is_training: u8 = l.get("is_training", 0)?;
    if is_training > 1 {
        return Err(SimError::Usage(format!("is_training must be 0 or 1, got {is_training}")));
    }
    let mode = match (policy.is_rl(), is_training) {
        (true, 1) => Mode::RlTrain,
        (true, _) => Mode::RlInfer,
        (false, t) => {
            if t == 1 {
                warnings.push(format!("is_training ignored for heuristic policy {policy}"));
            }
            Mode::Heuristic
        }
    };
    let lvl: u8 = l.get("debug_lvl", 1)?;
    let debug_lvl = Level::from_u8(lvl).ok_or_else(|| SimError::Usage(format!("debug_lvl must be in 1..=5, got {lvl}")))?;
    let seed = l.get("seed", 0u64)?;
    let output_dir: PathBuf = l.get("output_dir", PathBuf::from("."))?;
    let checkpoint: Option<PathBuf> = l.raw("checkpoint").map(|(v, _)| PathBuf::from(v)).filter(|p| !p.as_os_str().is_empty());
    let stream_window = l.get("stream_window", DEFAULT_STREAM_WINDOW)?;
    if stream_window == 0 {
        return Err(SimError::Usage("stream_window must be at least 1".into()));
    }
    let slowdown_threshold = l.get("slowdown_threshold", DEFAULT_SLOWDOWN_THRESHOLD)?;
    if slowdown_threshold == 0 {
        return Err(SimError::Usage("slowdown_threshold must be at least 1".into()));
    }

    let mut hp = Hyperparameters::default();
    let mut origins = BTreeMap::new();
    for (name, _) in Hyperparameters::default().fields() {
        if let Some((v, origin)) = l.raw(name) {
            set_field(&mut hp, name, &v).map_err(|e| SimError::Usage(format!("{origin}: {e}")))?;
            origins.insert(name, origin);
        }
    }
    if let Err(msg) = hp.validate() {
        let field = msg.split(':').next().unwrap_or_default();
        let origin = origins.get(field).cloned().unwrap_or_else(|| format!("--{field}"));
        let detail = msg.split_once(": ").map_or(msg.as_str(), |(_, d)| d);
        return Err(SimError::Usage(format!("{origin}: {detail}")));
    }

    if mode == Mode::RlInfer && checkpoint.is_none() {
        return Err(SimError::Usage(format!(
            "--checkpoint is required to run {policy} without training (pass --is_training 1 to train)"
        )));
    }

    Ok(ResolvedConfig {
        trace_path: args.job_log.clone(),
        node_path: args.node_structure.clone(),
        policy,
        mode,
        debug_lvl,
        seed,
        output_dir,
        checkpoint,
        stream_window,
        slowdown_threshold,
        hp,
        sources: l.sources,
        warnings,
    })
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: SimulationSummary,
    pub episodes: Vec<EpisodeReport>,
    pub checkpoint: Option<PathBuf>,
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| SimError::io(p, e))
}

/// Run the configured simulation (or training) and write every output file.
pub fn orchestrate(cfg: &ResolvedConfig) -> Result<RunOutcome> {
    create_dir(&cfg.results_dir())?;
    create_dir(&cfg.debug_dir())?;
    let cluster_cfg = parse_node_structure(&cfg.node_path)?;
    let mut log = DebugLog::create(cfg.debug_path(), cfg.debug_lvl)?;
    for w in &cfg.warnings {
        log.log(Level::Warn, w)?;
    }
    log.log_with(Level::Decision, || {
        format!("run {} on {} ({} nodes), mode {}", cfg.run_name(), cluster_cfg.name, cluster_cfg.total_nodes, cfg.mode.as_str())
    })?;

    let outcome = match cfg.mode {
        Mode::Heuristic => run_heuristic(cfg, &cluster_cfg, &mut log)?,
        Mode::RlTrain => run_training(cfg, &cluster_cfg, &mut log)?,
        Mode::RlInfer => run_inference(cfg, &cluster_cfg, &mut log)?,
    };

    let mut extra = cfg.echo();
    extra.push(("total_nodes".into(), cluster_cfg.total_nodes.to_string()));
    extra.push(("busy_node_seconds".into(), outcome.summary.busy_node_seconds.to_string()));
    extra.push(("events_processed".into(), outcome.summary.events_processed.to_string()));
    extra.push(("malformed_lines".into(), outcome.summary.malformed_lines.to_string()));
    extra.push(("peak_buffered".into(), outcome.summary.peak_buffered.to_string()));
    if let Some(last) = outcome.episodes.last() {
        extra.push(("episodes_run".into(), outcome.episodes.len().to_string()));
        extra.push(("final_total_reward".into(), format!("{:.9e}", last.total_reward)));
        extra.push(("final_epsilon".into(), last.epsilon.to_string()));
    }
    if let Some(p) = &outcome.checkpoint {
        extra.push(("checkpoint_written".into(), p.display().to_string()));
    }
    write_summary(cfg.summary_path(), &cfg.run_name(), &outcome.summary.metrics, &extra)?;
    log.flush()?;
    Ok(outcome)
}

fn run_heuristic(cfg: &ResolvedConfig, cluster: &ClusterConfig, log: &mut DebugLog) -> Result<RunOutcome> {
    let mut policy = cfg.policy.heuristic().expect("heuristic policy");
    let stream = JobStream::open(&cfg.trace_path, cfg.stream_window)?;
    let mut writer = ResultsWriter::create(cfg.results_path())?;
    let summary = Engine::new(
        stream,
        ClusterState::new(cluster.total_nodes),
        policy.as_mut(),
        &mut writer,
        log,
        cfg.engine_config(),
    )
    .run()?;
    writer.finish()?;
    Ok(RunOutcome { summary, episodes: Vec::new(), checkpoint: None })
}

fn run_training(cfg: &ResolvedConfig, cluster: &ClusterConfig, log: &mut DebugLog) -> Result<RunOutcome> {
    let agent = Agent::new(cfg.policy, cfg.hp.clone(), cfg.seed).expect("rl policy");
    let mut policy = RlPolicy::new(agent, true);
    let train_path = cfg.training_log_path();
    let mut train_log = Vec::new();
    let mut episodes = Vec::with_capacity(cfg.hp.episodes);

    for ep in 0..cfg.hp.episodes {
        let stream = JobStream::open(&cfg.trace_path, cfg.stream_window)?;
        let last = ep + 1 == cfg.hp.episodes;
        // only the final episode's schedule is kept as the run's results
        let report = if last {
            let mut writer = ResultsWriter::create(cfg.results_path())?;
            let r = run_episode(&mut policy, stream, cluster.total_nodes, &mut writer, log, cfg.engine_config(), ep)?;
            writer.finish()?;
            r
        } else {
            run_episode(&mut policy, stream, cluster.total_nodes, &mut NullSink, log, cfg.engine_config(), ep)?
        };
        writeln!(train_log, "{}", report.to_line()).expect("write to Vec");
        episodes.push(report);
    }
    fs::write(&train_path, &train_log).map_err(|e| SimError::io(&train_path, e))?;

    let ckpt_path = cfg.checkpoint_path();
    policy.agent().checkpoint().save(&ckpt_path)?;
    log.log_with(Level::Rl, || format!("checkpoint saved to {}", ckpt_path.display()))?;

    // the summary reflects the final training episode
    let summary = episodes.last().expect("at least one episode").summary.clone();
    Ok(RunOutcome { summary, episodes, checkpoint: Some(ckpt_path) })
}

fn run_inference(cfg: &ResolvedConfig, cluster: &ClusterConfig, log: &mut DebugLog) -> Result<RunOutcome> {
    let path = cfg.checkpoint.as_ref().expect("validated");
    let ckpt = Checkpoint::load(path)?;
    let expected = match cfg.policy {
        PolicyKind::Dqn => Algorithm::Dqn,
        _ => Algorithm::Pg,
    };
    if ckpt.algorithm != expected {
        return Err(SimError::Checkpoint(format!(
            "{} holds a {} agent but --policy is {}",
            path.display(),
            ckpt.algorithm.as_str(),
            cfg.policy
        )));
    }
    if ckpt.hp.layer_sizes() != cfg.hp.layer_sizes() {
        log.log(
            Level::Warn,
            format!("network shape {:?} taken from the checkpoint", ckpt.hp.layer_sizes()),
        )?;
    }
    let mut policy = RlPolicy::new(Agent::from_checkpoint(ckpt, cfg.seed), false);
    let stream = JobStream::open(&cfg.trace_path, cfg.stream_window)?;
    let mut writer = ResultsWriter::create(cfg.results_path())?;
    let summary = Engine::new(
        stream,
        ClusterState::new(cluster.total_nodes),
        &mut policy,
        &mut writer,
        log,
        cfg.engine_config(),
    )
    .run()?;
    writer.finish()?;
    Ok(RunOutcome { summary, episodes: Vec::new(), checkpoint: None })
}

/// Parse `argv`, run, and return the process exit code. Errors are reported
/// as a single line on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = load_config(&args.config_dir)
        .and_then(|file| resolve(&args, &file))
        .and_then(|cfg| orchestrate(&cfg));
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("batchsim: {e}");
            e.exit_code()
        }
    }
}
