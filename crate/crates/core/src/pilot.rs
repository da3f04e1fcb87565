//! Pilot jobs on a simulated batch facility.
//!
//! The allocation rule is the five-step decision: required nodes from the
//! data size, available nodes from active pilots, submit iff short, and
//! clamp the new pilot's size and runtime to the facility limits.

use crate::dataflow::{task_result, TaskRequest, Value};
use crate::fabric::{Fabric, Service};
use crate::ids::{MessageId, NodeId};
use crate::logstore::LogEntry;
use crate::time::{SimDuration, SimTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

/// Longest queue delay the facility model produces.
pub const MAX_QUEUE_DELAY_S: f64 = 24.0 * 3600.0;
pub const AUDIT_LOG: &str = "sys.pilot";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PilotError {
    #[error("threshold must be positive")]
    InvalidThreshold,
    #[error("insufficient resources: {0}")]
    InsufficientResources(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Eq. 1 with a ceiling, since node counts are integral.
pub fn required_nodes(data_bytes: u64, threshold_bytes: u64) -> Result<u32, PilotError> {
    if threshold_bytes == 0 {
        return Err(PilotError::InvalidThreshold);
    }
    Ok(data_bytes.div_ceil(threshold_bytes).max(1).min(u32::MAX as u64) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotState {
    Queued,
    Active,
    Done,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotSpec {
    pub id: u64,
    pub nodes: u32,
    pub runtime: SimDuration,
    pub state: PilotState,
    pub submit_time: SimTime,
    pub activate_time: Option<SimTime>,
    pub end_time: Option<SimTime>,
}

impl PilotSpec {
    pub fn expires_at(&self) -> Option<SimTime> {
        self.activate_time.map(|t| t + self.runtime)
    }
}

/// Eq. 2. Only active pilots count unless `count_queued` is set.
pub fn available_nodes(pilots: &[PilotSpec], count_queued: bool) -> u32 {
    pilots
        .iter()
        .filter(|p| p.state == PilotState::Active || (count_queued && p.state == PilotState::Queued))
        .map(|p| p.nodes)
        .sum()
}

/// Eq. 3.
pub fn decide_submit(n_req: u32, n_avail: u32) -> bool {
    n_avail < n_req
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QueueDelay {
    Constant { seconds: f64 },
    Uniform { max_s: f64 },
    /// Log-normal with the given median and log-space sigma, capped at 24 h.
    LogNormal { median_s: f64, sigma: f64 },
}

impl Default for QueueDelay {
    fn default() -> Self {
        QueueDelay::Constant { seconds: 0.0 }
    }
}

impl QueueDelay {
    pub fn validate(&self) -> Result<(), PilotError> {
        let ok = match self {
            QueueDelay::Constant { seconds } => (0.0..=MAX_QUEUE_DELAY_S).contains(seconds),
            QueueDelay::Uniform { max_s } => (0.0..=MAX_QUEUE_DELAY_S).contains(max_s),
            QueueDelay::LogNormal { median_s, sigma } => *median_s > 0.0 && *median_s <= MAX_QUEUE_DELAY_S && *sigma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(PilotError::InvalidConfig(format!("queue delay {self:?} outside 0..24 h")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimDuration {
        let s = match self {
            QueueDelay::Constant { seconds } => *seconds,
            QueueDelay::Uniform { max_s } => rng.gen::<f64>() * max_s,
            QueueDelay::LogNormal { median_s, sigma } => LogNormal::new(median_s.ln(), *sigma).unwrap().sample(rng),
        };
        SimDuration::from_secs_f64(s.clamp(0.0, MAX_QUEUE_DELAY_S))
    }

    /// Expected delay, used to time proactive renewals.
    pub fn mean_s(&self) -> f64 {
        match self {
            QueueDelay::Constant { seconds } => *seconds,
            QueueDelay::Uniform { max_s } => max_s / 2.0,
            QueueDelay::LogNormal { median_s, sigma } => (median_s * (sigma * sigma / 2.0).exp()).min(MAX_QUEUE_DELAY_S),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub total_nodes: u32,
    pub cores_per_node: u32,
    pub max_runtime_s: f64,
    #[serde(default)]
    pub queue_delay: QueueDelay,
}

impl Default for SystemSpec {
    fn default() -> Self {
        SystemSpec { total_nodes: 16, cores_per_node: 64, max_runtime_s: 48.0 * 3600.0, queue_delay: QueueDelay::default() }
    }
}

impl SystemSpec {
    pub fn validate(&self) -> Result<(), PilotError> {
        if self.total_nodes == 0 || self.cores_per_node == 0 || !(self.max_runtime_s > 0.0) {
            return Err(PilotError::InvalidConfig("total_nodes, cores_per_node and max_runtime_s must be positive".into()));
        }
        self.queue_delay.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub data_size: u64,
    pub threshold: u64,
    pub estimated_runtime_s: f64,
    pub cores: u32,
}

/// Eqs. 4 and 5.
pub fn pilot_parameters(n_req: u32, task: &TaskSpec, system: &SystemSpec) -> (u32, SimDuration) {
    let nodes = system.total_nodes.min(n_req);
    let runtime = system.max_runtime_s.min(task.estimated_runtime_s);
    (nodes, SimDuration::from_secs_f64(runtime))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreCost {
    pub cores: u32,
    pub mean_s: f64,
    pub sd_s: f64,
}

/// Runtime of the CFD stub as a function of cores and nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfdCostModel {
    /// Single-node runtime by core count; must contain the reference point.
    pub table: Vec<CoreCost>,
    /// Extra total-application time per node beyond the first, as a
    /// fraction of the single-node mean.
    pub multi_node_overhead: f64,
}

impl Default for CfdCostModel {
    fn default() -> Self {
        // 64 cores is measured; the rest is our own Fig 7 style fill-in
        let pts = [(1, 5200.0), (2, 2750.0), (4, 1480.0), (8, 870.0), (16, 590.0), (32, 465.0)];
        let mut table: Vec<CoreCost> = pts.iter().map(|&(c, m)| CoreCost { cores: c, mean_s: m, sd_s: m * 0.0863 }).collect();
        table.push(CoreCost { cores: 64, mean_s: 420.39, sd_s: 36.29 });
        CfdCostModel { table, multi_node_overhead: 0.12 }
    }
}

impl CfdCostModel {
    pub fn validate(&self) -> Result<(), PilotError> {
        if self.table.is_empty() || self.table.iter().any(|c| c.cores == 0 || !(c.mean_s > 0.0) || c.sd_s < 0.0) {
            return Err(PilotError::InvalidConfig("cost table rows need cores > 0, mean_s > 0, sd_s >= 0".into()));
        }
        if self.multi_node_overhead < 0.0 {
            return Err(PilotError::InvalidConfig("multi_node_overhead must be non-negative".into()));
        }
        Ok(())
    }

    /// Mean and SD of the total runtime. Uses the largest table row not
    /// exceeding `cores_per_node`.
    pub fn runtime_params(&self, cores_per_node: u32, nodes: u32) -> (f64, f64) {
        let row = self
            .table
            .iter()
            .filter(|c| c.cores <= cores_per_node)
            .max_by_key(|c| c.cores)
            .or_else(|| self.table.iter().min_by_key(|c| c.cores))
            .unwrap();
        let scale = 1.0 + self.multi_node_overhead * nodes.saturating_sub(1) as f64;
        (row.mean_s * scale, row.sd_s * scale)
    }

    /// Normal runtime truncated at zero by rejection.
    pub fn sample<R: Rng + ?Sized>(&self, cores_per_node: u32, nodes: u32, rng: &mut R) -> SimDuration {
        let (m, sd) = self.runtime_params(cores_per_node, nodes);
        if sd == 0.0 {
            return SimDuration::from_secs_f64(m);
        }
        let n = Normal::new(m, sd).unwrap();
        loop {
            let x = n.sample(rng);
            if x > 0.0 {
                return SimDuration::from_secs_f64(x);
            }
        }
    }

    /// Estimate used to size reactive pilots: mean plus four SDs.
    pub fn estimate_s(&self, cores_per_node: u32, nodes: u32) -> f64 {
        let (m, sd) = self.runtime_params(cores_per_node, nodes);
        m + 4.0 * sd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub start: SimTime,
    pub completion: SimTime,
    pub runtime: SimDuration,
}

/// Runs one task on an active pilot.
pub fn execute_task<R: Rng + ?Sized>(
    task: &TaskSpec,
    pilot: &PilotSpec,
    system: &SystemSpec,
    model: &CfdCostModel,
    start: SimTime,
    rng: &mut R,
) -> Result<TaskResult, PilotError> {
    if pilot.state != PilotState::Active {
        return Err(PilotError::InsufficientResources(format!("pilot {} is {:?}", pilot.id, pilot.state)));
    }
    if (pilot.nodes as u64) * (system.cores_per_node as u64) < task.cores as u64 {
        return Err(PilotError::InsufficientResources(format!(
            "{} cores needed, pilot has {}",
            task.cores,
            pilot.nodes * system.cores_per_node
        )));
    }
    let per_node = task.cores.div_ceil(pilot.nodes).min(system.cores_per_node);
    let runtime = model.sample(per_node, pilot.nodes, rng);
    Ok(TaskResult { start, completion: start + runtime, runtime })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// Keep a placeholder pilot of `nodes` alive at all times, renewing it
    /// one expected queue delay before it expires.
    Proactive { nodes: u32 },
    /// Submit only when a task arrives; release the pilot once idle.
    Reactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotConfig {
    pub system: SystemSpec,
    #[serde(default)]
    pub cost: CfdCostModel,
    pub strategy: Strategy,
    /// Bytes of task input per requested node.
    pub threshold_bytes: u64,
    pub task_cores: u32,
    /// Count queued pilots toward available nodes.
    #[serde(default)]
    pub count_queued: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    7
}

impl PilotConfig {
    pub fn validate(&self) -> Result<(), PilotError> {
        self.system.validate()?;
        self.cost.validate()?;
        if self.threshold_bytes == 0 {
            return Err(PilotError::InvalidThreshold);
        }
        if let Strategy::Proactive { nodes } = self.strategy {
            if nodes == 0 {
                return Err(PilotError::InvalidConfig("placeholder pilot needs at least one node".into()));
            }
        }
        if self.task_cores as u64 > self.system.total_nodes as u64 * self.system.cores_per_node as u64 {
            return Err(PilotError::InvalidConfig("task needs more cores than the facility has".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub graph: String,
    pub node: String,
    pub iteration: u64,
    pub data_bytes: u64,
    pub n_req: u32,
    pub requested_at: SimTime,
    pub submitted_pilot: Option<u64>,
    pub pilot: Option<u64>,
    pub started_at: Option<SimTime>,
    pub completed_at: Option<SimTime>,
    pub runtime_s: Option<f64>,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Wake {
    Start,
    Activate(u64),
    Expire(u64),
    TaskDone { pilot: u64, task: usize, attempt: u32 },
    Renew,
}

struct Pending {
    task: usize,
    request: TaskRequest,
}

/// The controller plus the facility it talks to, as one fabric service on
/// the HPC node. It watches the task request log.
pub struct PilotController {
    cfg: PilotConfig,
    node: NodeId,
    idx: usize,
    rng: ChaCha8Rng,
    pilots: Vec<PilotSpec>,
    busy: BTreeMap<u64, usize>,
    placeholders: std::collections::BTreeSet<u64>,
    backlog: VecDeque<Pending>,
    /// Pilots out of the queue but waiting for free nodes, oldest first.
    ready: VecDeque<u64>,
    requests: BTreeMap<usize, TaskRequest>,
    tasks: Vec<TaskRecord>,
    wakes: BTreeMap<u64, Wake>,
    next_token: u64,
    audit_seq: u64,
}

impl PilotController {
    /// Registers the controller on `node`, watching `request_log`.
    pub fn install(fabric: &mut Fabric, node: &NodeId, request_log: &str, cfg: PilotConfig) -> Result<usize, PilotError> {
        cfg.validate()?;
        fabric
            .create_log(node, AUDIT_LOG, 256, 1 << 16)
            .map_err(|e| PilotError::InvalidConfig(e.to_string()))?;
        let idx = fabric.next_service_id();
        let ctl = PilotController {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            node: node.clone(),
            idx,
            pilots: Vec::new(),
            busy: BTreeMap::new(),
            placeholders: Default::default(),
            backlog: VecDeque::new(),
            ready: VecDeque::new(),
            requests: BTreeMap::new(),
            tasks: Vec::new(),
            wakes: BTreeMap::new(),
            next_token: 0,
            audit_seq: 0,
        };
        let got = fabric.add_service(Box::new(ctl));
        debug_assert_eq!(got, idx);
        fabric.watch(idx, node, request_log);
        let now = fabric.now();
        fabric.wake_at(idx, 0, now);
        Ok(idx)
    }

    pub fn tasks(&self) -> &[TaskRecord] {
        &self.tasks
    }

    pub fn pilots(&self) -> &[PilotSpec] {
        &self.pilots
    }

    pub fn config(&self) -> &PilotConfig {
        &self.cfg
    }

    /// Node-seconds pilots spent active, and the part spent running tasks.
    pub fn utilization(&self, now: SimTime) -> (f64, f64) {
        let held: f64 = self
            .pilots
            .iter()
            .filter_map(|p| {
                let a = p.activate_time?;
                let end = p.end_time.unwrap_or(now).min(now);
                Some(p.nodes as f64 * end.saturating_sub(a).as_secs_f64())
            })
            .sum();
        let used: f64 = self
            .tasks
            .iter()
            .filter_map(|t| {
                let p = &self.pilots[t.pilot? as usize];
                Some(p.nodes as f64 * t.runtime_s?)
            })
            .sum();
        (held, used)
    }

    fn wake(&mut self, fabric: &mut Fabric, at: SimTime, w: Wake) {
        self.next_token += 1;
        self.wakes.insert(self.next_token, w);
        fabric.wake_at(self.idx, self.next_token, at);
    }

    fn audit(&mut self, fabric: &mut Fabric, text: String) {
        self.audit_seq += 1;
        let id = MessageId::derive(&[b"pilot-audit", &self.audit_seq.to_le_bytes()]);
        let mut b = format!("{:.3} {text}", fabric.now().as_secs_f64()).into_bytes();
        b.truncate(256);
        let _ = fabric.append_local(&self.node.clone(), AUDIT_LOG, &b, id);
    }

    fn submit(&mut self, fabric: &mut Fabric, nodes: u32, runtime: SimDuration) -> u64 {
        let now = fabric.now();
        let id = self.pilots.len() as u64;
        let delay = self.cfg.system.queue_delay.sample(&mut self.rng);
        self.pilots.push(PilotSpec { id, nodes, runtime, state: PilotState::Queued, submit_time: now, activate_time: None, end_time: None });
        self.audit(fabric, format!("submit pilot {id} nodes={nodes} runtime_s={:.1}", runtime.as_secs_f64()));
        self.wake(fabric, now + delay, Wake::Activate(id));
        id
    }

    fn n_req(&self, req: &TaskRequest) -> u32 {
        let bytes = req.encode().len() as u64;
        required_nodes(bytes, self.cfg.threshold_bytes).unwrap()
    }

    fn needed_nodes(&self, n_req: u32) -> u32 {
        let by_cores = self.cfg.task_cores.div_ceil(self.cfg.system.cores_per_node);
        n_req.max(by_cores).min(self.cfg.system.total_nodes)
    }

    fn consider_submit(&mut self, fabric: &mut Fabric, n_req: u32) -> Option<u64> {
        let n_req = self.needed_nodes(n_req);
        let avail = available_nodes(&self.pilots, self.cfg.count_queued);
        if !decide_submit(n_req, avail) {
            return None;
        }
        let est = self.cfg.cost.estimate_s(self.cfg.system.cores_per_node, n_req);
        let task = TaskSpec { data_size: 0, threshold: self.cfg.threshold_bytes, estimated_runtime_s: est, cores: self.cfg.task_cores };
        let (nodes, runtime) = match self.cfg.strategy {
            Strategy::Reactive => pilot_parameters(n_req, &task, &self.cfg.system),
            // placeholders are sized for the task but held for as long as allowed
            Strategy::Proactive { .. } => {
                let (nodes, _) = pilot_parameters(n_req, &task, &self.cfg.system);
                (nodes, SimDuration::from_secs_f64(self.cfg.system.max_runtime_s))
            }
        };
        Some(self.submit(fabric, nodes, runtime))
    }

    fn dispatch(&mut self, fabric: &mut Fabric) {
        let now = fabric.now();
        let mut i = 0;
        while i < self.backlog.len() {
            let need = self.needed_nodes(self.tasks[self.backlog[i].task].n_req);
            let pilot = self
                .pilots
                .iter()
                .find(|p| p.state == PilotState::Active && p.nodes >= need && !self.busy.contains_key(&p.id))
                .cloned();
            let Some(pilot) = pilot else {
                i += 1;
                continue;
            };
            let pending = self.backlog.remove(i).unwrap();
            let t = &mut self.tasks[pending.task];
            t.attempts += 1;
            let spec = TaskSpec { data_size: t.data_bytes, threshold: self.cfg.threshold_bytes, estimated_runtime_s: 0.0, cores: self.cfg.task_cores };
            let res = execute_task(&spec, &pilot, &self.cfg.system, &self.cfg.cost, now, &mut self.rng).expect("pilot checked above");
            let attempt = t.attempts;
            t.pilot = Some(pilot.id);
            t.started_at = Some(now);
            self.busy.insert(pilot.id, pending.task);
            self.requests.insert(pending.task, pending.request);
            let msg = format!("start task {} on pilot {} attempt {attempt}", pending.task, pilot.id);
            self.audit(fabric, msg);
            let expiry = pilot.expires_at().unwrap();
            if res.completion <= expiry {
                self.wake(fabric, res.completion, Wake::TaskDone { pilot: pilot.id, task: pending.task, attempt });
            }
            // otherwise the expiry wake kills and requeues it
        }
    }

    fn on_request(&mut self, fabric: &mut Fabric, entry: &LogEntry) {
        let Some(req) = TaskRequest::decode(&entry.payload) else {
            self.audit(fabric, format!("undecodable request seq {}", entry.seq));
            return;
        };
        if self.tasks.iter().any(|t| t.graph == req.graph && t.node == req.node && t.iteration == req.iteration) {
            return;
        }
        let n_req = self.n_req(&req);
        let idx = self.tasks.len();
        self.tasks.push(TaskRecord {
            graph: req.graph.clone(),
            node: req.node.clone(),
            iteration: req.iteration,
            data_bytes: req.encode().len() as u64,
            n_req,
            requested_at: fabric.now(),
            submitted_pilot: None,
            pilot: None,
            started_at: None,
            completed_at: None,
            runtime_s: None,
            attempts: 0,
        });
        self.audit(fabric, format!("request {}/{} iteration {} n_req={n_req}", req.graph, req.node, req.iteration));
        self.backlog.push_back(Pending { task: idx, request: req });
        self.tasks[idx].submitted_pilot = self.consider_submit(fabric, n_req);
        self.settle(fabric);
    }

    fn finish(&mut self, fabric: &mut Fabric, pilot: u64, task: usize) {
        let now = fabric.now();
        self.busy.remove(&pilot);
        let t = &mut self.tasks[task];
        t.completed_at = Some(now);
        let runtime = now.saturating_sub(t.started_at.unwrap());
        t.runtime_s = Some(runtime.as_secs_f64());
        let req = self.requests.remove(&task).unwrap();
        let descriptor = serde_json::json!({
            "iteration": req.iteration,
            "pilot": pilot,
            "runtime_s": runtime.as_secs_f64(),
        });
        let (to, log, payload, id) = task_result(&req, Value::Bytes(descriptor.to_string().into_bytes()));
        let here = self.node.clone();
        // the reply log is normally local; a remote one goes through transport
        let _ = if to == here {
            fabric.append_local(&here, &log, &payload, id).map(|_| ())
        } else {
            fabric.remote_append(&here, &to, &log, payload, id).map(|_| ())
        };
        self.audit(fabric, format!("complete task {task} on pilot {pilot} runtime_s={:.2}", runtime.as_secs_f64()));
        self.settle(fabric);
    }

    fn active_nodes(&self) -> u32 {
        available_nodes(&self.pilots, false)
    }

    fn activate(&mut self, fabric: &mut Fabric, id: u64) {
        let now = fabric.now();
        let p = &mut self.pilots[id as usize];
        p.state = PilotState::Active;
        p.activate_time = Some(now);
        let expiry = now + p.runtime;
        self.audit(fabric, format!("activate pilot {id}"));
        self.wake(fabric, expiry, Wake::Expire(id));
        if self.placeholders.contains(&id) {
            let lead = SimDuration::from_secs_f64(self.cfg.system.queue_delay.mean_s());
            let at = SimTime(expiry.0.saturating_sub(lead.0)).max(now);
            self.wake(fabric, at, Wake::Renew);
        }
    }

    /// Starts waiting pilots while nodes are free, hands out backlog, and
    /// lets idle reactive pilots go, until nothing changes.
    fn settle(&mut self, fabric: &mut Fabric) {
        loop {
            while let Some(&id) = self.ready.front() {
                if self.active_nodes() + self.pilots[id as usize].nodes > self.cfg.system.total_nodes {
                    break;
                }
                self.ready.pop_front();
                self.activate(fabric, id);
            }
            self.dispatch(fabric);
            if self.cfg.strategy != Strategy::Reactive || !self.backlog.is_empty() {
                return;
            }
            let idle: Vec<u64> =
                self.pilots.iter().filter(|p| p.state == PilotState::Active && !self.busy.contains_key(&p.id)).map(|p| p.id).collect();
            if idle.is_empty() {
                return;
            }
            for id in idle {
                self.release(fabric, id, PilotState::Done);
            }
        }
    }

    fn release(&mut self, fabric: &mut Fabric, pilot: u64, state: PilotState) {
        let now = fabric.now();
        let p = &mut self.pilots[pilot as usize];
        if matches!(p.state, PilotState::Done | PilotState::Expired) {
            return;
        }
        p.state = state;
        p.end_time = Some(now);
        self.audit(fabric, format!("pilot {pilot} {state:?}"));
    }
}

impl Service for PilotController {
    fn on_append(&mut self, fabric: &mut Fabric, _node: &NodeId, _log: &str, entry: &LogEntry) {
        self.on_request(fabric, entry);
    }

    fn on_wake(&mut self, fabric: &mut Fabric, token: u64) {
        let w = if token == 0 { Some(Wake::Start) } else { self.wakes.remove(&token) };
        match w {
            None => {}
            Some(Wake::Start) | Some(Wake::Renew) => {
                if let Strategy::Proactive { nodes } = self.cfg.strategy {
                    let nodes = nodes.min(self.cfg.system.total_nodes);
                    let id = self.submit(fabric, nodes, SimDuration::from_secs_f64(self.cfg.system.max_runtime_s));
                    self.placeholders.insert(id);
                }
            }
            Some(Wake::Activate(id)) => {
                self.ready.push_back(id);
                self.settle(fabric);
            }
            Some(Wake::Expire(id)) => {
                if let Some(task) = self.busy.remove(&id) {
                    // killed at the walltime limit: back to the queue
                    let req = self.requests.remove(&task).unwrap();
                    self.tasks[task].started_at = None;
                    self.tasks[task].pilot = None;
                    self.audit(fabric, format!("task {task} killed at pilot {id} expiry"));
                    self.backlog.push_front(Pending { task, request: req });
                }
                self.release(fabric, id, PilotState::Expired);
                if let Some(front) = self.backlog.front() {
                    let n = self.tasks[front.task].n_req;
                    self.consider_submit(fabric, n);
                }
                self.settle(fabric);
            }
            Some(Wake::TaskDone { pilot, task, attempt }) => {
                if self.busy.get(&pilot) == Some(&task) && self.tasks[task].attempts == attempt {
                    self.finish(fabric, pilot, task);
                }
            }
        }
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}
