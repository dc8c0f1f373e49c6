//! Run configuration: a JSON document validated against a fixed schema,
//! echoed canonically into every run record, plus the experiment presets.
//!
//! Every violation is collected with its dotted path, e.g.
//! `optimizer.momentum: out of range: must be in [0, 1), got 1.2`.

mod presets;
mod schema;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cluster::tcp::{TcpOptions, WorkerOptions};
use crate::cluster::wire::DEFAULT_MAX_FRAME;
use crate::cluster::{run_inproc, HeartbeatConfig, InProcOptions};
use crate::engine::{run_training_with_header, RunRecord, TrainRun};
use crate::error::{Error, Result};
use crate::schedule::ScheduleKind;

pub use presets::{preset, PRESETS};

/// One schema violation, located by a dotted path into the config document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Large-batch simulation in one process.
    #[default]
    Simulate,
    /// Parameter server and workers exchanging encoded frames in one thread.
    ClusterInproc,
    /// Parameter server and workers over loopback TCP.
    ClusterTcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    #[serde(default = "default_heartbeat_ms")]
    pub heartbeat_ms: u64,
    #[serde(default = "default_eviction")]
    pub eviction_threshold: u64,
    /// Workers to start (local TCP) or wait for (`serve-ps`). Defaults to the
    /// largest count the schedule asks for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Address of the admin command socket.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<String>,
    #[serde(default = "default_max_frame")]
    pub max_frame: u32,
}

fn default_heartbeat_ms() -> u64 {
    1000
}
fn default_eviction() -> u64 {
    3
}
fn default_listen() -> String {
    "127.0.0.1:7070".to_string()
}
fn default_max_frame() -> u32 {
    DEFAULT_MAX_FRAME
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            heartbeat_ms: default_heartbeat_ms(),
            eviction_threshold: default_eviction(),
            workers: None,
            listen: default_listen(),
            control: None,
            max_frame: default_max_frame(),
        }
    }
}

impl ClusterConfig {
    /// Logical-tick heartbeat settings for the in-process transport.
    pub fn inproc_heartbeat(&self) -> HeartbeatConfig {
        HeartbeatConfig::new(1, self.eviction_threshold)
    }

    pub fn tcp_options(&self, wait_for_workers: usize) -> TcpOptions {
        TcpOptions {
            heartbeat_ms: self.heartbeat_ms,
            eviction_threshold: self.eviction_threshold,
            wait_for_workers,
            max_frame: self.max_frame,
        }
    }

    pub fn worker_options(&self) -> WorkerOptions {
        WorkerOptions {
            heartbeat_ms: self.heartbeat_ms,
            max_frame: self.max_frame,
            fail_at_version: None,
        }
    }
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainRun,
    #[serde(default)]
    pub mode: Mode,
    /// Where `run` writes the record (JSON lines).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub cluster: ClusterConfig,
}

impl RunConfig {
    pub fn new(train: TrainRun) -> Self {
        Self {
            train,
            mode: Mode::Simulate,
            output: None,
            cluster: ClusterConfig::default(),
        }
    }

    /// Reseeds the run, its dataset and a random schedule together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.train.dataset.seed = seed;
        if let ScheduleKind::RandStep { seed: s, .. } = &mut self.train.schedule.kind {
            *s = seed;
        }
        self
    }

    /// The config as a JSON value with every default filled in and keys in
    /// sorted order. This is what run records carry in their header.
    pub fn canonical(&self) -> Result<Value> {
        Ok(serde_json::to_value(self)?)
    }

    pub fn canonical_string(&self) -> Result<String> {
        Ok(self.canonical()?.to_string())
    }

    /// Largest worker count the schedule can ask for.
    pub fn max_workers(&self) -> usize {
        self.train.schedule.range().1
    }
}

/// Parses and validates a config document, reporting all violations.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let doc: Value = serde_json::from_str(text).map_err(|e| {
        Error::Config(vec![ConfigIssue {
            path: String::new(),
            message: format!("not valid JSON: {e}"),
        }])
    })?;
    from_value(doc)
}

pub fn from_value(doc: Value) -> Result<RunConfig> {
    let issues = schema::check(&doc);
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| {
        Error::Config(vec![ConfigIssue {
            path: String::new(),
            message: e.to_string(),
        }])
    })?;
    // Cross-field rules the schema cannot see.
    cfg.train.prepare().map_err(|e| {
        Error::Config(vec![ConfigIssue {
            path: String::new(),
            message: e.to_string(),
        }])
    })?;
    Ok(cfg)
}

/// Runs a config in its mode and returns the record, whose header carries
/// the canonical config.
pub fn execute(cfg: &RunConfig) -> Result<RunRecord> {
    let prep = cfg.train.prepare()?;
    let header = cfg.canonical()?;
    match cfg.mode {
        Mode::Simulate => run_training_with_header(&prep, header),
        Mode::ClusterInproc => {
            let opts = InProcOptions {
                heartbeat: cfg.cluster.inproc_heartbeat(),
                ..InProcOptions::default()
            };
            run_inproc(&prep, &opts, header)
        }
        Mode::ClusterTcp => {
            let workers = cfg.cluster.workers.unwrap_or_else(|| cfg.max_workers());
            let opts = cfg.cluster.tcp_options(workers);
            let (record, reports) = crate::cluster::tcp::run_local_tcp(&prep, &opts, workers, &[], header)?;
            for r in reports.iter().filter_map(|r| r.as_ref().err()) {
                log::warn!("worker failed: {r}");
            }
            Ok(record)
        }
    }
}
