use crate::ids::NodeId;
use crate::netsim::{LinkSpec, NodeSpec, ThroughputNoise};
use crate::pilot::{CfdCostModel, PilotConfig, QueueDelay};
use crate::pipeline::cups::{CupsConfig, DUTY_CYCLE_S};
use crate::pipeline::{Channel, WeatherModel, CADENCE_S, WINDOW_LEN};
use crate::transport::RetryPolicy;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    /// A value that parsed but is not acceptable; `key` names it.
    #[error("{key}: {msg}")]
    Invalid { key: String, msg: String },
}

fn invalid<T>(key: impl Into<String>, msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid { key: key.into(), msg: msg.into() })
}

/// A whole simulation run. Every experiment section is optional; the runner
/// executes those present, in file order of this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    /// Root seed. Every random stream of the run is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub latency: Option<LatencyExperiment>,
    #[serde(default)]
    pub slicing: Option<SlicingExperiment>,
    #[serde(default)]
    pub cfd: Option<CfdExperiment>,
    #[serde(default)]
    pub pipeline: Option<PipelineExperiment>,
    #[serde(default)]
    pub pilot: Option<PilotConfig>,
    #[serde(default)]
    pub sustained: Option<SustainedExperiment>,
    #[serde(default)]
    pub queue_sweep: Option<QueueSweepExperiment>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyPath {
    pub label: String,
    /// Store-and-forward route; each hop is one full remote append.
    pub route: Vec<NodeId>,
    #[serde(default)]
    pub size_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyExperiment {
    #[serde(default = "kib")]
    pub payload_bytes: usize,
    /// Samples per path, the first of which is discarded.
    #[serde(default = "thirty")]
    pub count: usize,
    pub paths: Vec<LatencyPath>,
}

fn kib() -> usize {
    1024
}
fn thirty() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlicingExperiment {
    /// The cell node. Each UE reaches it over its own topology link, and
    /// the two links share the cell's PRBs.
    pub cell: NodeId,
    /// The two UEs. The first takes fraction `f`, the second `1 - f`.
    pub ues: [NodeId; 2],
    #[serde(default = "nine_fractions")]
    pub fractions: Vec<f64>,
    /// Samples per UE per trial.
    #[serde(default = "hundred")]
    pub samples: usize,
    /// Independently seeded trials averaged per configuration.
    #[serde(default = "one_u")]
    pub trials: usize,
    #[serde(default = "one_f")]
    pub sample_duration_s: f64,
}

fn nine_fractions() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}
fn hundred() -> usize {
    100
}
fn one_u() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfdExperiment {
    #[serde(default = "thousand")]
    pub samples: usize,
    #[serde(default = "sixty_four")]
    pub cores: u32,
    #[serde(default = "one_u32")]
    pub nodes: u32,
    #[serde(default = "ten")]
    pub bin_s: f64,
    /// Falls back to the pilot section's model, then to the default table.
    #[serde(default)]
    pub cost: Option<CfdCostModel>,
}

fn thousand() -> usize {
    1000
}
fn sixty_four() -> u32 {
    64
}
fn one_u32() -> u32 {
    1
}
fn ten() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineExperiment {
    pub duration_s: u64,
    /// Extra simulated time after the last record so tasks can finish.
    #[serde(default = "drain")]
    pub drain_s: u64,
    #[serde(default = "edge")]
    pub edge: NodeId,
    #[serde(default = "repo")]
    pub repo: NodeId,
    #[serde(default = "hpc")]
    pub hpc: NodeId,
    /// Fixed by the station; accepted only at its one supported value.
    #[serde(default = "cadence")]
    pub cadence_s: u64,
    #[serde(default = "window_len")]
    pub window_len: usize,
    #[serde(default = "alpha")]
    pub alpha: f64,
    #[serde(default = "channels")]
    pub channels: Vec<Channel>,
    #[serde(default = "capacity")]
    pub telemetry_capacity: u64,
    #[serde(default)]
    pub weather: WeatherModel,
}

fn drain() -> u64 {
    7200
}
fn edge() -> NodeId {
    "unl-edge".into()
}
fn repo() -> NodeId {
    "ucsb-repo".into()
}
fn hpc() -> NodeId {
    "nd-hpc".into()
}
fn cadence() -> u64 {
    CADENCE_S
}
fn window_len() -> usize {
    WINDOW_LEN
}
fn alpha() -> f64 {
    0.05
}
fn channels() -> Vec<Channel> {
    vec![Channel::WindSpeed]
}
fn capacity() -> u64 {
    4096
}

impl PipelineExperiment {
    pub fn cups_config(&self) -> CupsConfig {
        CupsConfig {
            edge: self.edge.clone(),
            repo: self.repo.clone(),
            hpc: self.hpc.clone(),
            duration_s: self.duration_s,
            alpha: self.alpha,
            channels: self.channels.clone(),
            telemetry_capacity: self.telemetry_capacity,
        }
    }
}

/// Back-to-back tasks on a dedicated pilot. The pilot section's facility
/// and cost model are used; its strategy is replaced by one placeholder
/// sized for the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SustainedExperiment {
    #[serde(default = "thirty")]
    pub tasks: usize,
}

/// Alert-to-completion time of each pilot strategy under each queue delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueSweepExperiment {
    pub delays: Vec<QueueDelay>,
    #[serde(default = "twenty")]
    pub alerts: usize,
    #[serde(default = "duty")]
    pub interval_s: f64,
    #[serde(default = "one_u32")]
    pub placeholder_nodes: u32,
}

fn twenty() -> usize {
    20
}
fn duty() -> f64 {
    DUTY_CYCLE_S as f64
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        Self::from_toml(&text)
    }

    /// Checks everything the runner relies on, before any simulation step.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.trim().is_empty() {
            return invalid("name", "must not be empty");
        }
        let mut names = BTreeSet::new();
        for (i, n) in self.topology.nodes.iter().enumerate() {
            if !names.insert(n.name.clone()) {
                return invalid(format!("topology.nodes[{i}].name"), format!("duplicate node {}", n.name));
            }
            if !(n.ue_efficiency > 0.0 && n.ue_efficiency.is_finite()) {
                return invalid(format!("topology.nodes[{i}].ue_efficiency"), "must be positive");
            }
        }
        let mut pairs = BTreeSet::new();
        for (i, l) in self.topology.links.iter().enumerate() {
            let key = format!("topology.links[{i}]");
            for end in [&l.a, &l.b] {
                if !names.contains(end) {
                    return invalid(key, format!("unknown node {end}"));
                }
            }
            l.validate().map_err(|e| ConfigError::Invalid { key: key.clone(), msg: e.to_string() })?;
            let pair = if l.a < l.b { (l.a.clone(), l.b.clone()) } else { (l.b.clone(), l.a.clone()) };
            if !pairs.insert(pair) {
                return invalid(key, "duplicate link between the same nodes");
            }
        }
        let r = &self.retry;
        if !(r.reply_timeout_ms > 0.0 && r.backoff_base_ms > 0.0 && r.backoff_cap_ms >= r.backoff_base_ms) {
            return invalid("retry", "timeouts must be positive and backoff_cap_ms >= backoff_base_ms");
        }
        let has_link = |a: &NodeId, b: &NodeId| pairs.contains(&if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) });

        if let Some(lat) = &self.latency {
            if lat.count < 2 {
                return invalid("latency.count", "need at least 2 samples (the first is discarded)");
            }
            if lat.payload_bytes == 0 {
                return invalid("latency.payload_bytes", "must be positive");
            }
            if lat.paths.is_empty() {
                return invalid("latency.paths", "at least one path");
            }
            for (i, p) in lat.paths.iter().enumerate() {
                if p.route.len() < 2 {
                    return invalid(format!("latency.paths[{i}].route"), "needs at least two nodes");
                }
                for hop in p.route.windows(2) {
                    if !has_link(&hop[0], &hop[1]) {
                        return invalid(format!("latency.paths[{i}].route"), format!("no link {} - {}", hop[0], hop[1]));
                    }
                }
            }
        }
        if let Some(s) = &self.slicing {
            for ue in &s.ues {
                if !has_link(ue, &s.cell) {
                    return invalid("slicing.ues", format!("no link {ue} - {}", s.cell));
                }
            }
            if s.ues[0] == s.ues[1] {
                return invalid("slicing.ues", "the two UEs must differ");
            }
            if s.fractions.is_empty() || s.fractions.len() > 9 {
                return invalid("slicing.fractions", "between 1 and 9 configurations");
            }
            for f in &s.fractions {
                if !(*f > 0.0 && *f < 1.0) {
                    return invalid("slicing.fractions", format!("{f} outside (0, 1)"));
                }
            }
            if s.samples == 0 || s.trials == 0 {
                return invalid("slicing.samples", "samples and trials must be positive");
            }
            if !(s.sample_duration_s > 0.0) {
                return invalid("slicing.sample_duration_s", "must be positive");
            }
            let links: Vec<_> =
                self.topology.links.iter().filter(|l| s.ues.iter().any(|u| (&l.a == u && l.b == s.cell) || (&l.b == u && l.a == s.cell))).collect();
            if links[0].base_capacity_mbps != links[1].base_capacity_mbps {
                return invalid("slicing.ues", "both UE links must carry the cell's base_capacity_mbps");
            }
            for l in links {
                if let ThroughputNoise::Relative { sd } | ThroughputNoise::Absolute { sd_mbps: sd } = l.throughput_noise {
                    if !(sd >= 0.0) {
                        return invalid("slicing", format!("throughput_noise of {}-{} needs a non-negative sd", l.a, l.b));
                    }
                }
            }
        }
        if let Some(c) = &self.cfd {
            if c.samples < 2 {
                return invalid("cfd.samples", "need at least 2");
            }
            if c.cores == 0 || c.nodes == 0 {
                return invalid("cfd.cores", "cores and nodes must be positive");
            }
            if !(c.bin_s > 0.0) {
                return invalid("cfd.bin_s", "must be positive");
            }
            if let Some(m) = &c.cost {
                m.validate().map_err(|e| ConfigError::Invalid { key: "cfd.cost".into(), msg: e.to_string() })?;
            }
        }
        if let Some(p) = &self.pilot {
            p.validate().map_err(|e| ConfigError::Invalid { key: "pilot".into(), msg: e.to_string() })?;
        }
        if let Some(p) = &self.pipeline {
            if p.cadence_s != CADENCE_S {
                return invalid("pipeline.cadence_s", format!("only the station cadence {CADENCE_S} is supported"));
            }
            if p.window_len != WINDOW_LEN {
                return invalid("pipeline.window_len", format!("only {WINDOW_LEN} records per window are supported"));
            }
            p.cups_config().validate().map_err(|e| ConfigError::Invalid { key: "pipeline".into(), msg: e.to_string() })?;
            p.weather.validate().map_err(|e| ConfigError::Invalid { key: "pipeline.weather".into(), msg: e.to_string() })?;
            for n in [&p.edge, &p.repo, &p.hpc] {
                if !names.contains(n) {
                    return invalid("pipeline", format!("unknown node {n}"));
                }
            }
            if !has_link(&p.edge, &p.repo) || !has_link(&p.repo, &p.hpc) {
                return invalid("pipeline", "needs links edge - repo and repo - hpc");
            }
            if self.pilot.is_none() {
                return invalid("pilot", "required by the pipeline section");
            }
        }
        if let Some(s) = &self.sustained {
            if s.tasks < 2 {
                return invalid("sustained.tasks", "need at least 2");
            }
            if self.pilot.is_none() {
                return invalid("pilot", "required by the sustained section");
            }
        }
        if let Some(q) = &self.queue_sweep {
            if q.delays.is_empty() {
                return invalid("queue_sweep.delays", "at least one delay model");
            }
            for (i, d) in q.delays.iter().enumerate() {
                d.validate().map_err(|e| ConfigError::Invalid { key: format!("queue_sweep.delays[{i}]"), msg: e.to_string() })?;
            }
            if q.alerts == 0 || !(q.interval_s > 0.0) || q.placeholder_nodes == 0 {
                return invalid("queue_sweep", "alerts, interval_s and placeholder_nodes must be positive");
            }
            if self.pilot.is_none() {
                return invalid("pilot", "required by the queue_sweep section");
            }
        }
        Ok(())
    }
}
