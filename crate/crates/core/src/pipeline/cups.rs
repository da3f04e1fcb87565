//! End-to-end wiring of the CUPS application across three sites.
//!
//! Edge node: a station appends a telemetry record every 300 s, and a
//! handler forwards each record to the repository. Repository: a duty timer
//! appends a tick every 30 minutes. Whichever of tick or record arrives
//! last completes a window pair and injects it into the detection graph.
//! HPC node: the CFD task node, gated on the vote, hands requests to the
//! pilot controller.

use super::{detect_change, Channel, ChangeAlert, PipelineError, TelemetryRecord, WeatherModel, Window, CADENCE_S, RECORD_LEN, WINDOW_LEN};
use crate::dataflow::{self, compile, DataflowGraph, DeployedGraph, Edge, GraphNode, NodeOp, OpRegistry, Operand, PortRef, PortSpec, Value, ValueType};
use crate::events::{AppendEffect, HandlerContext, HandlerResult};
use crate::fabric::Fabric;
use crate::ids::{MessageId, NodeId};
use crate::logstore::LogEntry;
use crate::pilot::{PilotConfig, PilotController};
use crate::time::SimTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const DUTY_CYCLE_S: u64 = 1800;
pub const TELEMETRY_LOG: &str = "telemetry";
pub const DUTY_LOG: &str = "duty";
pub const REQUEST_LOG: &str = "pilot.requests";
pub const GRAPH: &str = "cups";
/// Telemetry travels in 1 KB elements.
pub const TELEMETRY_ELEMENT: u32 = 1024;
const SKIP: &[u8] = b"skip";
const ALERT_MAX: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CupsConfig {
    #[serde(default = "edge")]
    pub edge: NodeId,
    #[serde(default = "repo")]
    pub repo: NodeId,
    #[serde(default = "hpc")]
    pub hpc: NodeId,
    pub duration_s: u64,
    #[serde(default = "alpha")]
    pub alpha: f64,
    #[serde(default = "channels")]
    pub channels: Vec<Channel>,
    #[serde(default = "capacity")]
    pub telemetry_capacity: u64,
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
fn alpha() -> f64 {
    0.05
}
fn channels() -> Vec<Channel> {
    vec![Channel::WindSpeed]
}
fn capacity() -> u64 {
    4096
}

impl CupsConfig {
    pub fn new(duration_s: u64) -> Self {
        CupsConfig {
            edge: edge(),
            repo: repo(),
            hpc: hpc(),
            duration_s,
            alpha: alpha(),
            channels: channels(),
            telemetry_capacity: capacity(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.duration_s < 2 * DUTY_CYCLE_S {
            return Err(PipelineError::Degenerate("duration must cover two duty cycles".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PipelineError::Degenerate("alpha must lie in (0, 1)".into()));
        }
        if self.channels.is_empty() {
            return Err(PipelineError::Degenerate("at least one channel".into()));
        }
        if self.telemetry_capacity < (2 * WINDOW_LEN) as u64 {
            return Err(PipelineError::Degenerate("telemetry_capacity must hold two windows".into()));
        }
        Ok(())
    }
}

pub struct CupsDeployment {
    pub config: CupsConfig,
    pub graph: DeployedGraph,
    pub pilot: usize,
}

fn window_bytes() -> u32 {
    (RECORD_LEN * WINDOW_LEN) as u32
}

fn cups_graph(cfg: &CupsConfig) -> DataflowGraph {
    let win = ValueType::Bytes { max_len: window_bytes() };
    DataflowGraph {
        name: GRAPH.into(),
        nodes: vec![
            GraphNode {
                id: "detect".into(),
                inputs: vec![PortSpec { name: "current".into(), ty: win }, PortSpec { name: "previous".into(), ty: win }],
                output: ValueType::Bytes { max_len: ALERT_MAX },
                op: NodeOp::Func { name: "detect".into() },
                placement: cfg.repo.clone(),
            },
            GraphNode {
                id: "cfd".into(),
                inputs: vec![PortSpec { name: "alert".into(), ty: ValueType::Bytes { max_len: ALERT_MAX } }],
                output: ValueType::Bytes { max_len: 512 },
                op: NodeOp::Task {
                    service_node: cfg.hpc.clone(),
                    service_log: REQUEST_LOG.into(),
                    gate: Some("vote".into()),
                    skip: SKIP.to_vec(),
                },
                placement: cfg.hpc.clone(),
            },
        ],
        edges: vec![Edge { from: "detect".into(), to: "cfd".into(), port: "alert".into() }],
        externals: vec![
            PortRef { node: "detect".into(), port: "current".into() },
            PortRef { node: "detect".into(), port: "previous".into() },
        ],
        window: 256,
    }
}

fn decode_window(v: &Value) -> Result<Window, String> {
    let Value::Bytes(b) = v else { return Err("window must be bytes".into()) };
    if b.len() != RECORD_LEN * WINDOW_LEN {
        return Err(format!("window of {} bytes", b.len()));
    }
    let recs = b.chunks(RECORD_LEN).map(TelemetryRecord::decode).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    Window::new(recs).map_err(|e| e.to_string())
}

fn ops(cfg: &CupsConfig) -> OpRegistry {
    let mut r = OpRegistry::default();
    let (alpha, chans) = (cfg.alpha, cfg.channels.clone());
    r.register("detect", move |vals| {
        let cur = decode_window(&vals[0])?;
        let prev = decode_window(&vals[1])?;
        let alert = detect_change(&cur, &prev, alpha, &chans).map_err(|e| e.to_string())?;
        Ok(Value::Bytes(serde_json::to_vec(&alert).map_err(|e| e.to_string())?))
    });
    r.register("vote", |vals| {
        let Value::Bytes(b) = &vals[0] else { return Err("alert must be bytes".into()) };
        let alert: ChangeAlert = serde_json::from_slice(b).map_err(|e| e.to_string())?;
        Ok(Value::Int64(alert.vote as i64))
    });
    r
}

fn record_id(r: &TelemetryRecord) -> MessageId {
    MessageId::derive(&[b"telemetry", r.station_id.as_bytes(), &r.timestamp.0.to_le_bytes()])
}

fn tick_id(m: u64) -> MessageId {
    MessageId::derive(&[b"duty", &m.to_le_bytes()])
}

/// Feeds iteration `m` (window pair ending at `m * 1800 s`) into the graph
/// if both its tick and all twelve records are present.
fn evaluate(graph: &DeployedGraph, ctx: &HandlerContext<'_>, m: u64) -> HandlerResult {
    if m < 2 {
        return Ok(Vec::new());
    }
    let duty = ctx.log(DUTY_LOG).ok_or("missing duty log")?;
    let ticked = duty.tail(64).map_err(|e| e.to_string())?.iter().any(|e| e.payload.get(..8) == Some(&m.to_le_bytes()[..]));
    if !ticked {
        return Ok(Vec::new());
    }
    let tel = ctx.log(TELEMETRY_LOG).ok_or("missing telemetry log")?;
    let recent = tel.tail(256).map_err(|e| e.to_string())?;
    let t0 = m * DUTY_CYCLE_S;
    let mut slots: Vec<Option<[u8; RECORD_LEN]>> = vec![None; 2 * WINDOW_LEN];
    for e in &recent {
        let Ok(r) = TelemetryRecord::decode(&e.payload) else { continue };
        let t = r.timestamp.0 / 1_000_000;
        if r.timestamp.0 % 1_000_000 != 0 || t + 2 * DUTY_CYCLE_S < t0 || t >= t0 || (t0 - t) % CADENCE_S != 0 {
            continue;
        }
        let k = ((t + 2 * DUTY_CYCLE_S - t0) / CADENCE_S) as usize;
        slots[k] = Some(r.encode());
    }
    if slots.iter().any(Option::is_none) {
        return Ok(Vec::new());
    }
    let bytes: Vec<u8> = slots.iter().flat_map(|s| s.unwrap()).collect();
    let (prev, cur) = bytes.split_at(RECORD_LEN * WINDOW_LEN);
    let e1 = graph.external_effect(ctx.node, "detect", "previous", m, Value::Bytes(prev.to_vec())).map_err(|e| e.to_string())?;
    let e2 = graph.external_effect(ctx.node, "detect", "current", m, Value::Bytes(cur.to_vec())).map_err(|e| e.to_string())?;
    Ok(vec![e1, e2])
}

/// Builds logs, handlers, the detection graph and the pilot controller,
/// and schedules the station and the duty timer.
pub fn deploy(fabric: &mut Fabric, cfg: CupsConfig, weather: WeatherModel, weather_seed: u64, pilot: PilotConfig) -> Result<CupsDeployment, String> {
    cfg.validate().map_err(|e| e.to_string())?;
    weather.validate().map_err(|e| e.to_string())?;
    let (edge, repo, hpc) = (cfg.edge.clone(), cfg.repo.clone(), cfg.hpc.clone());
    for n in [&edge, &repo, &hpc] {
        fabric.node(n).map_err(|e| e.to_string())?;
    }
    let cap = cfg.telemetry_capacity;
    fabric.create_log(&edge, TELEMETRY_LOG, TELEMETRY_ELEMENT, cap).map_err(|e| e.to_string())?;
    fabric.create_log(&repo, TELEMETRY_LOG, TELEMETRY_ELEMENT, cap).map_err(|e| e.to_string())?;
    fabric.create_log(&repo, DUTY_LOG, 8, 4096).map_err(|e| e.to_string())?;
    fabric.create_log(&hpc, REQUEST_LOG, 16384, 1024).map_err(|e| e.to_string())?;

    let graph = compile(fabric, cups_graph(&cfg), &ops(&cfg)).map_err(|e| e.to_string())?;

    let to = repo.clone();
    fabric
        .register_handler(&edge, "forward", move |e: &LogEntry, _ctx: &HandlerContext<'_>| {
            Ok(vec![AppendEffect::remote(to.clone(), TELEMETRY_LOG, e.payload.clone())])
        })
        .map_err(|e| e.to_string())?;
    fabric.bind(&edge, TELEMETRY_LOG, "forward").map_err(|e| e.to_string())?;

    let g1 = Arc::new(graph.clone());
    let g2 = g1.clone();
    fabric
        .register_handler(&repo, "window-on-record", move |e, ctx| {
            let r = TelemetryRecord::decode(&e.payload).map_err(|e| e.to_string())?;
            let k = r.timestamp.0 / 1_000_000 / DUTY_CYCLE_S;
            let mut out = evaluate(&g1, ctx, k + 1)?;
            out.extend(evaluate(&g1, ctx, k + 2)?);
            Ok(out)
        })
        .map_err(|e| e.to_string())?;
    fabric.bind(&repo, TELEMETRY_LOG, "window-on-record").map_err(|e| e.to_string())?;
    fabric
        .register_handler(&repo, "window-on-tick", move |e, ctx| {
            let m = u64::from_le_bytes(e.payload[..8].try_into().map_err(|_| "short tick")?);
            evaluate(&g2, ctx, m)
        })
        .map_err(|e| e.to_string())?;
    fabric.bind(&repo, DUTY_LOG, "window-on-tick").map_err(|e| e.to_string())?;

    let pilot = PilotController::install(fabric, &hpc, REQUEST_LOG, pilot).map_err(|e| e.to_string())?;

    // the station and the duty timer write to local storage whether or not
    // the node's runtime is up
    let mut rng = ChaCha8Rng::seed_from_u64(weather_seed);
    let mut t = 0;
    while t < cfg.duration_s {
        let rec = weather.sample(SimTime::from_secs(t), &mut rng);
        let at = SimTime::from_secs(t);
        let e2 = edge.clone();
        fabric.schedule(at, move |f| {
            let _ = f.append_local(&e2, TELEMETRY_LOG, &rec.encode(), record_id(&rec));
        });
        t += CADENCE_S;
    }
    let mut m = 1;
    while m * DUTY_CYCLE_S <= cfg.duration_s {
        let r2 = repo.clone();
        fabric.schedule(SimTime::from_secs(m * DUTY_CYCLE_S), move |f| {
            let _ = f.append_local(&r2, DUTY_LOG, &m.to_le_bytes(), tick_id(m));
        });
        m += 1;
    }
    Ok(CupsDeployment { config: cfg, graph, pilot })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopSample {
    pub hop: String,
    pub key: u64,
    pub sent_at_s: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRow {
    pub iteration: u64,
    pub window_end_s: f64,
    pub detected_at_s: f64,
    pub vote: bool,
    pub channel: Option<Channel>,
    pub alert: ChangeAlert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub iteration: u64,
    pub alert_at_s: f64,
    pub requested_at_s: f64,
    pub pilot: Option<u64>,
    pub pilot_submitted_at_s: Option<f64>,
    pub pilot_activated_at_s: Option<f64>,
    pub started_at_s: Option<f64>,
    pub completed_at_s: Option<f64>,
    pub runtime_s: Option<f64>,
    pub attempts: u32,
    /// Time from completion until the next possible alert, which is one duty
    /// cycle after this one.
    pub validity_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CupsMetrics {
    pub hops: Vec<HopSample>,
    pub alerts: Vec<AlertRow>,
    pub tasks: Vec<TaskRow>,
    pub cfd_outputs: usize,
    pub skips: usize,
}

pub fn collect(fabric: &Fabric, d: &CupsDeployment) -> Result<CupsMetrics, String> {
    let c = &d.config;
    let mut m = CupsMetrics::default();
    let edge_log = fabric.log(&c.edge, TELEMETRY_LOG).map_err(|e| e.to_string())?;
    let repo_log = fabric.log(&c.repo, TELEMETRY_LOG).map_err(|e| e.to_string())?;
    let all = |l: &crate::logstore::LogHandle| l.scan(l.earliest_seq(), l.last_seq()).map(|s| s.entries).unwrap_or_default();
    let sent: std::collections::BTreeMap<u64, SimTime> = all(&edge_log)
        .iter()
        .filter_map(|e| TelemetryRecord::decode(&e.payload).ok().map(|r| (r.timestamp.0, e.created_at)))
        .collect();
    for e in all(&repo_log) {
        let Ok(r) = TelemetryRecord::decode(&e.payload) else { continue };
        if let Some(s) = sent.get(&r.timestamp.0) {
            m.hops.push(HopSample {
                hop: format!("{}->{}", c.edge, c.repo),
                key: r.timestamp.0 / 1_000_000,
                sent_at_s: s.as_secs_f64(),
                latency_ms: (e.created_at - *s).as_millis_f64(),
            });
        }
    }

    let g = GRAPH;
    let det_log = fabric.log(&c.repo, &dataflow::output_log_name(g, "detect")).map_err(|e| e.to_string())?;
    let alert_in = fabric.log(&c.hpc, &dataflow::input_log_name(g, "cfd", "alert")).map_err(|e| e.to_string())?;
    let arrived: std::collections::BTreeMap<u64, SimTime> = all(&alert_in)
        .iter()
        .filter_map(|e| Operand::decode(&e.payload).map(|o| (o.iteration, e.created_at)))
        .collect();
    let mut detected = std::collections::BTreeMap::new();
    for e in all(&det_log) {
        let op = Operand::decode(&e.payload).ok_or("corrupt detect output")?;
        let Value::Bytes(b) = &op.value else { return Err("detect output is not bytes".into()) };
        let alert: ChangeAlert = serde_json::from_slice(b).map_err(|e| e.to_string())?;
        if let Some(a) = arrived.get(&op.iteration) {
            m.hops.push(HopSample {
                hop: format!("{}->{}", c.repo, c.hpc),
                key: op.iteration,
                sent_at_s: e.created_at.as_secs_f64(),
                latency_ms: (*a - e.created_at).as_millis_f64(),
            });
        }
        detected.insert(op.iteration, e.created_at);
        m.alerts.push(AlertRow {
            iteration: op.iteration,
            window_end_s: (op.iteration * DUTY_CYCLE_S) as f64,
            detected_at_s: e.created_at.as_secs_f64(),
            vote: alert.vote,
            channel: alert.channel,
            alert,
        });
    }
    m.alerts.sort_by_key(|a| a.iteration);

    for o in d.graph.outputs(fabric, "cfd").map_err(|e| e.to_string())? {
        if o.value == Value::Bytes(SKIP.to_vec()) {
            m.skips += 1;
        } else {
            m.cfd_outputs += 1;
        }
    }

    let ctl: &PilotController = fabric.service(d.pilot).ok_or("pilot controller missing")?;
    for t in ctl.tasks() {
        let alert_at = detected.get(&t.iteration).copied().unwrap_or(t.requested_at);
        let pilot = t.pilot.map(|p| &ctl.pilots()[p as usize]);
        let completed = t.completed_at;
        m.tasks.push(TaskRow {
            iteration: t.iteration,
            alert_at_s: alert_at.as_secs_f64(),
            requested_at_s: t.requested_at.as_secs_f64(),
            pilot: t.pilot,
            pilot_submitted_at_s: pilot.map(|p| p.submit_time.as_secs_f64()),
            pilot_activated_at_s: pilot.and_then(|p| p.activate_time).map(|x| x.as_secs_f64()),
            started_at_s: t.started_at.map(|x| x.as_secs_f64()),
            completed_at_s: completed.map(|x| x.as_secs_f64()),
            runtime_s: t.runtime_s,
            attempts: t.attempts,
            validity_s: completed.map(|x| (alert_at.as_secs_f64() + DUTY_CYCLE_S as f64) - x.as_secs_f64()),
        });
    }
    Ok(m)
}
