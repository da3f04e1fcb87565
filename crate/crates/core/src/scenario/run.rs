use super::config::{ConfigError, ScenarioConfig};
use super::report::*;
use crate::dataflow::{self, TaskRequest};
use crate::fabric::Fabric;
use crate::ids::{MessageId, NodeId};
use crate::netsim::{slicing, Network, NodeSpec, SliceConfig};
use crate::pilot::{CfdCostModel, PilotConfig, PilotController, PilotState, QueueDelay, Strategy, SystemSpec};
use crate::pipeline::cups::{self, DUTY_CYCLE_S};
use crate::time::{SimDuration, SimTime};
use crate::transport::{mean_sd, measure_latency};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed in {section}: {msg}")]
    Sim { section: &'static str, msg: String },
}

fn sim_err(section: &'static str) -> impl Fn(String) -> RunError {
    move |msg| RunError::Sim { section, msg }
}

/// Independent sub-seed for one named stream of a run.
pub fn sub_seed(root: u64, tag: &str, index: u64) -> u64 {
    let id = MessageId::derive(&[b"seed", &root.to_le_bytes(), tag.as_bytes(), &index.to_le_bytes()]);
    u64::from_le_bytes(id.as_bytes()[..8].try_into().unwrap())
}

struct Monitor(Vec<InvariantCheck>);

impl Monitor {
    fn check(&mut self, name: &str, held: bool, detail: impl Into<String>) {
        self.0.push(InvariantCheck { name: name.into(), held, detail: detail.into() });
    }
}

/// Runs every section of a validated scenario. Deterministic in
/// `cfg.seed`. Invariant violations are reported, not raised; check
/// [`MetricsReport::all_invariants_held`].
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let mut raw = RawSeries::default();
    let mut mon = Monitor(Vec::new());
    let mut summary = BTreeMap::new();
    let mut report = MetricsReport {
        schema_version: SCHEMA_VERSION,
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        latency: Vec::new(),
        slicing: None,
        cfd: None,
        pipeline: None,
        sustained: None,
        queue_sweep: Vec::new(),
        invariants: Vec::new(),
        summary: BTreeMap::new(),
        trace_digests: BTreeMap::new(),
    };

    if cfg.latency.is_some() {
        report.latency = run_latency(cfg, &mut raw, &mut mon, &mut summary)?;
    }
    if cfg.slicing.is_some() {
        report.slicing = Some(run_slicing(cfg, &mut raw, &mut mon, &mut summary)?);
    }
    if cfg.cfd.is_some() {
        report.cfd = Some(run_cfd(cfg, &mut raw, &mut summary));
    }
    if cfg.pipeline.is_some() {
        report.pipeline = Some(run_pipeline(cfg, &mut raw, &mut mon, &mut summary)?);
    }
    if cfg.sustained.is_some() {
        report.sustained = Some(run_sustained(cfg, &mut mon, &mut summary)?);
    }
    if cfg.queue_sweep.is_some() {
        report.queue_sweep = run_queue_sweep(cfg, &mut raw, &mut mon, &mut summary)?;
    }

    report.trace_digests = raw.traces.iter().map(|(k, t)| (k.clone(), t.digest())).collect();
    report.invariants = mon.0;
    report.summary = summary;
    Ok(RunOutput { report, raw })
}

fn network(cfg: &ScenarioConfig, seed: u64) -> Result<Network, RunError> {
    Network::from_specs(&cfg.topology.nodes, &cfg.topology.links, seed).map_err(|e| RunError::Sim { section: "topology", msg: e.to_string() })
}

fn run_latency(cfg: &ScenarioConfig, raw: &mut RawSeries, mon: &mut Monitor, summary: &mut BTreeMap<String, f64>) -> Result<Vec<LatencyRow>, RunError> {
    let lat = cfg.latency.as_ref().unwrap();
    let err = sim_err("latency");
    let mut net = network(cfg, sub_seed(cfg.seed, "latency", 0))?;
    net.enable_trace();
    let mut f = Fabric::new(net, cfg.retry);
    let mut rows = Vec::new();
    for (i, p) in lat.paths.iter().enumerate() {
        // a log per path keeps message ids of different paths apart
        let log = format!("latency.{i}");
        for n in &p.route[1..] {
            if f.log(n, &log).is_err() {
                f.create_log(n, &log, lat.payload_bytes as u32, 4 * lat.count as u64).map_err(|e| err(e.to_string()))?;
            }
        }
        for n in &p.route[..p.route.len() - 1] {
            f.set_size_cache(n, p.size_cache).map_err(|e| err(e.to_string()))?;
        }
        let s = measure_latency(&mut f, &p.route, &log, lat.payload_bytes, lat.count).map_err(|e| err(format!("{}: {e}", p.label)))?;
        for n in &p.route[..p.route.len() - 1] {
            f.set_size_cache(n, false).map_err(|e| err(e.to_string()))?;
        }
        for (k, x) in s.samples_ms.iter().enumerate() {
            raw.latency.push(LatencySample { path: p.label.clone(), sample: k, latency_ms: *x, discarded: k == 0 });
        }
        let ok = s.n == lat.count - 1 && s.samples_ms.iter().all(|x| x.is_finite() && *x > 0.0);
        mon.check(&format!("latency[{}] samples complete", p.label), ok, format!("{} of {} samples kept", s.n, lat.count));
        summary.insert(format!("latency.{}.mean_ms", p.label), s.mean_ms);
        summary.insert(format!("latency.{}.sd_ms", p.label), s.sd_ms);
        rows.push(LatencyRow {
            path: p.label.clone(),
            route: p.route.iter().map(|n| n.as_str()).collect::<Vec<_>>().join(">"),
            size_cache: p.size_cache,
            payload_bytes: lat.payload_bytes,
            mean_ms: s.mean_ms,
            sd_ms: s.sd_ms,
            n: s.n,
        });
    }
    // every stored entry is there once
    let dup_free = f.log_contents().values().all(|entries| {
        let ids: BTreeSet<_> = entries.iter().map(|e| e.1).collect();
        ids.len() == entries.len()
    });
    mon.check("latency logs hold each message once", dup_free, "");
    if let Some(t) = f.network().trace() {
        raw.traces.insert("latency".into(), t.clone());
    }
    Ok(rows)
}

fn slice_id(f: f64) -> u8 {
    ((f * 10.0).round() as u8).clamp(1, 9)
}

fn run_slicing(cfg: &ScenarioConfig, raw: &mut RawSeries, mon: &mut Monitor, summary: &mut BTreeMap<String, f64>) -> Result<SlicingReport, RunError> {
    let s = cfg.slicing.as_ref().unwrap();
    let err = sim_err("slicing");
    let eff = |n: &NodeId| cfg.topology.nodes.iter().find(|x| &x.name == n).map(|x| x.ue_efficiency).unwrap_or(1.0);
    let effs = [eff(&s.ues[0]), eff(&s.ues[1])];
    let mut base = 0.0;
    let mut rows = Vec::new();
    let duration = SimDuration::from_secs_f64(s.sample_duration_s);
    for (k, &f) in s.fractions.iter().enumerate() {
        let fr = [f, 1.0 - f];
        let mut series: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for trial in 0..s.trials {
            let mut net = network(cfg, sub_seed(cfg.seed, "slicing", (k * 1000 + trial) as u64))?;
            let mut slices = Vec::new();
            for u in 0..2 {
                let link = net.link_mut(&s.ues[u], &s.cell).ok_or_else(|| err("UE link missing".into()))?;
                let sl = SliceConfig { slice_id: slice_id(fr[u]), prb_fraction: fr[u], assigned_ue: s.ues[u].clone() };
                link.slices = vec![sl.clone()];
                base = link.base_capacity_mbps;
                slices.push(sl);
            }
            if trial == 0 {
                let total: f64 = slices.iter().map(|x| x.prb_fraction).sum();
                mon.check(&format!("slicing config {} fractions sum to at most 1", k + 1), total <= 1.0 + 1e-12, format!("sum {total}"));
                let model: f64 = (0..2).map(|u| slicing::mean_capacity(base, &slices[u], effs[u])).sum();
                let bound = base * effs[0].max(effs[1]);
                mon.check(&format!("slicing config {} conserves capacity", k + 1), model <= bound + 1e-9, format!("{model:.3} <= {bound:.3}"));
            }
            for u in 0..2 {
                let recs = net.run_throughput_trial(&s.ues[u], duration, s.samples, SimTime::ZERO).map_err(|e| err(e.to_string()))?;
                for (i, r) in recs.iter().enumerate() {
                    let mbps = r.achieved_mbps();
                    series[u].push(mbps);
                    raw.slicing.push(SliceSample {
                        config: k + 1,
                        ue: s.ues[u].to_string(),
                        fraction: fr[u],
                        trial,
                        sample: i,
                        bytes: r.bytes,
                        start_us: r.start.0,
                        end_us: r.end.0,
                        mbps,
                    });
                }
            }
        }
        let (m1, sd1) = mean_sd(&series[0]);
        let (m2, sd2) = mean_sd(&series[1]);
        rows.push(SliceRow {
            config: k + 1,
            ue_1: s.ues[0].to_string(),
            fraction_1: fr[0],
            mean_mbps_1: m1,
            sd_mbps_1: sd1,
            ue_2: s.ues[1].to_string(),
            fraction_2: fr[1],
            mean_mbps_2: m2,
            sd_mbps_2: sd2,
            n: series[0].len(),
        });
        summary.insert(format!("slicing.{}.{}.mean_mbps", k + 1, s.ues[0]), m1);
        summary.insert(format!("slicing.{}.{}.mean_mbps", k + 1, s.ues[1]), m2);
    }
    Ok(SlicingReport { base_capacity_mbps: base, ue_efficiency: effs, rows })
}

fn cost_model(cfg: &ScenarioConfig) -> CfdCostModel {
    cfg.cfd
        .as_ref()
        .and_then(|c| c.cost.clone())
        .or_else(|| cfg.pilot.as_ref().map(|p| p.cost.clone()))
        .unwrap_or_default()
}

fn run_cfd(cfg: &ScenarioConfig, raw: &mut RawSeries, summary: &mut BTreeMap<String, f64>) -> CfdReport {
    let c = cfg.cfd.as_ref().unwrap();
    let model = cost_model(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "cfd", 0));
    let xs: Vec<f64> = (0..c.samples).map(|_| model.sample(c.cores, c.nodes, &mut rng).as_secs_f64()).collect();
    let (mean, sd) = mean_sd(&xs);
    let (mm, msd) = model.runtime_params(c.cores, c.nodes);
    let top = xs.iter().cloned().fold(0.0, f64::max);
    let nbins = (top / c.bin_s).floor() as usize + 1;
    let mut counts = vec![0usize; nbins];
    for x in &xs {
        counts[(x / c.bin_s).floor() as usize] += 1;
    }
    // drop empty leading bins so the histogram starts near the data
    let first = counts.iter().position(|n| *n > 0).unwrap_or(0);
    raw.runtime_hist = counts
        .iter()
        .enumerate()
        .skip(first)
        .map(|(i, n)| HistBin { bin_lo_s: i as f64 * c.bin_s, bin_hi_s: (i + 1) as f64 * c.bin_s, count: *n })
        .collect();
    raw.runtimes_s = xs;
    summary.insert("cfd.mean_s".into(), mean);
    summary.insert("cfd.sd_s".into(), sd);
    CfdReport { cores: c.cores, nodes: c.nodes, n: c.samples, mean_s: mean, sd_s: sd, model_mean_s: mm, model_sd_s: msd }
}

fn pilot_config(cfg: &ScenarioConfig, tag: &str, index: u64) -> PilotConfig {
    let mut p = cfg.pilot.clone().unwrap();
    p.seed ^= sub_seed(cfg.seed, tag, index);
    p
}

fn run_pipeline(cfg: &ScenarioConfig, raw: &mut RawSeries, mon: &mut Monitor, summary: &mut BTreeMap<String, f64>) -> Result<PipelineReport, RunError> {
    let p = cfg.pipeline.as_ref().unwrap();
    let err = sim_err("pipeline");
    let mut net = network(cfg, sub_seed(cfg.seed, "pipeline", 0))?;
    net.enable_trace();
    let mut f = Fabric::new(net, cfg.retry);
    let d = cups::deploy(&mut f, p.cups_config(), p.weather.clone(), sub_seed(cfg.seed, "weather", 0), pilot_config(cfg, "pilot", 0))
        .map_err(&err)?;
    f.run_until(SimTime::from_secs(p.duration_s + p.drain_s));
    let m = cups::collect(&f, &d).map_err(&err)?;

    // invariant monitor
    let mut failures = Vec::new();
    for n in f.node_ids() {
        failures.extend(f.failures(&n).into_iter().map(|x| format!("{n}: {x}")));
    }
    mon.check("pipeline handlers never failed", failures.is_empty(), failures.join("; "));
    let strict = dataflow::check_strictness(&f, &d.graph);
    mon.check("dataflow strictness", strict.is_ok(), strict.err().unwrap_or_default());
    let repo_log = f.log(&p.repo, cups::TELEMETRY_LOG).map_err(|e| err(e.to_string()))?;
    let entries = repo_log.scan(repo_log.earliest_seq(), repo_log.last_seq()).map_err(|e| err(e.to_string()))?.entries;
    let distinct: BTreeSet<_> = entries.iter().map(|e| e.message_id).collect();
    mon.check("telemetry delivered exactly once", distinct.len() == entries.len(), format!("{} entries, {} distinct", entries.len(), distinct.len()));
    let voted: BTreeSet<u64> = m.alerts.iter().filter(|a| a.vote).map(|a| a.iteration).collect();
    let unjustified: Vec<u64> = m.tasks.iter().map(|t| t.iteration).filter(|i| !voted.contains(i)).collect();
    mon.check("no task without a preceding alert", unjustified.is_empty(), format!("{unjustified:?}"));
    let unserved: Vec<u64> = voted.iter().copied().filter(|i| !m.tasks.iter().any(|t| t.iteration == *i && t.completed_at_s.is_some())).collect();
    mon.check("every alert yields a completed task", unserved.is_empty(), format!("{unserved:?}"));
    let max_hop = m.hops.iter().filter(|h| h.hop.starts_with(p.repo.as_str())).map(|h| h.latency_ms).fold(0.0, f64::max);
    let late: Vec<u64> = m
        .tasks
        .iter()
        .filter(|t| t.requested_at_s - t.alert_at_s > DUTY_CYCLE_S as f64 + max_hop / 1e3 + 1e-6)
        .map(|t| t.iteration)
        .collect();
    mon.check("alert-to-trigger within one duty cycle plus one transfer", late.is_empty(), format!("{late:?}"));

    let mut hops = Vec::new();
    let names: BTreeSet<&str> = m.hops.iter().map(|h| h.hop.as_str()).collect();
    for name in names {
        let xs: Vec<f64> = m.hops.iter().filter(|h| h.hop == name).map(|h| h.latency_ms).collect();
        let (mean, sd) = mean_sd(&xs);
        summary.insert(format!("pipeline.hop.{name}.mean_ms"), mean);
        hops.push(HopSummary { hop: name.to_string(), mean_ms: mean, sd_ms: sd, n: xs.len() });
    }
    summary.insert("pipeline.alerts".into(), voted.len() as f64);
    summary.insert("pipeline.evaluated_windows".into(), m.alerts.len() as f64);
    if let Some(i) = voted.iter().next() {
        summary.insert("pipeline.first_alert_window_end_s".into(), (*i * DUTY_CYCLE_S) as f64);
    }
    let validity: Vec<f64> = m.tasks.iter().filter_map(|t| t.validity_s).collect();
    if !validity.is_empty() {
        summary.insert("pipeline.min_validity_s".into(), validity.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    if let Some(t) = f.network().trace() {
        raw.traces.insert("pipeline".into(), t.clone());
    }
    raw.hops = m.hops.clone();
    raw.alerts = m.alerts.clone();
    Ok(PipelineReport {
        evaluated_windows: m.alerts.len(),
        alert_iterations: voted.into_iter().collect(),
        cfd_outputs: m.cfd_outputs,
        skips: m.skips,
        hops,
        tasks: m.tasks,
        frames_sent: f.stats().frames_sent,
        frames_dropped: f.stats().frames_dropped,
    })
}

const HPC: &str = "hpc";
const REPLY_LOG: &str = "results";

/// A one-node fabric holding only the facility, with its request and reply
/// logs.
fn facility(pilot: PilotConfig, seed: u64) -> Result<(Fabric, usize), String> {
    let node = NodeId::new(HPC);
    let net = Network::from_specs(&[NodeSpec { name: node.clone(), ue_efficiency: 1.0 }], &[], seed).map_err(|e| e.to_string())?;
    let mut f = Fabric::new(net, Default::default());
    f.create_log(&node, cups::REQUEST_LOG, 16384, 1 << 14).map_err(|e| e.to_string())?;
    f.create_log(&node, REPLY_LOG, 512, 1 << 14).map_err(|e| e.to_string())?;
    let idx = PilotController::install(&mut f, &node, cups::REQUEST_LOG, pilot).map_err(|e| e.to_string())?;
    Ok((f, idx))
}

fn request(iteration: u64) -> (Vec<u8>, MessageId) {
    let req = TaskRequest {
        graph: "synthetic".into(),
        node: "cfd".into(),
        iteration,
        inputs: Vec::new(),
        reply_node: NodeId::new(HPC),
        reply_log: REPLY_LOG.into(),
    };
    (req.encode(), MessageId::derive(&[b"synthetic-task", &iteration.to_le_bytes()]))
}

/// Runs until every one of `n` tasks completed, or `limit`.
fn drain_tasks(f: &mut Fabric, idx: usize, n: usize, limit: SimTime) {
    f.run_while(limit, |f| {
        let ctl: &PilotController = f.service(idx).unwrap();
        ctl.tasks().len() < n || ctl.tasks().iter().any(|t| t.completed_at.is_none())
    });
}

fn run_sustained(cfg: &ScenarioConfig, mon: &mut Monitor, summary: &mut BTreeMap<String, f64>) -> Result<SustainedReport, RunError> {
    let s = cfg.sustained.as_ref().unwrap();
    let err = sim_err("sustained");
    // dedicated: one placeholder sized for the task, active before work arrives
    let mut pc = pilot_config(cfg, "sustained", 0);
    pc.strategy = Strategy::Proactive { nodes: pc.task_cores.div_ceil(pc.system.cores_per_node) };
    let (mut f, idx) = facility(pc, sub_seed(cfg.seed, "sustained", 1)).map_err(&err)?;
    f.run_while(SimTime::from_secs(30 * 24 * 3600), |f| {
        let ctl: &PilotController = f.service(idx).unwrap();
        !ctl.pilots().iter().any(|p| p.state == PilotState::Active)
    });
    let node = NodeId::new(HPC);
    for k in 0..s.tasks as u64 {
        let (b, id) = request(k);
        f.append_local(&node, cups::REQUEST_LOG, &b, id).map_err(|e| err(e.to_string()))?;
    }
    drain_tasks(&mut f, idx, s.tasks, SimTime::from_secs(60 * 24 * 3600));
    let ctl: &PilotController = f.service(idx).unwrap();
    let done: Vec<f64> = ctl.tasks().iter().filter_map(|t| t.completed_at.map(|c| c.as_secs_f64())).collect();
    mon.check("sustained run completes every task", done.len() == s.tasks, format!("{} of {}", done.len(), s.tasks));
    let mut completions = done.clone();
    completions.sort_by(f64::total_cmp);
    let first_start = ctl.tasks().iter().filter_map(|t| t.started_at.map(|x| x.as_secs_f64())).fold(f64::INFINITY, f64::min);
    let last = completions.last().copied().unwrap_or(f64::NAN);
    let mean_interval_s = (last - first_start) / s.tasks as f64;
    summary.insert("sustained.mean_interval_s".into(), mean_interval_s);
    Ok(SustainedReport { tasks: s.tasks, first_start_s: first_start, last_completion_s: last, mean_interval_s, completions_s: completions })
}

fn delay_label(d: &QueueDelay) -> String {
    match d {
        QueueDelay::Constant { seconds } => format!("constant({seconds})"),
        QueueDelay::Uniform { max_s } => format!("uniform(0,{max_s})"),
        QueueDelay::LogNormal { median_s, sigma } => format!("lognormal({median_s},{sigma})"),
    }
}

fn run_queue_sweep(cfg: &ScenarioConfig, raw: &mut RawSeries, mon: &mut Monitor, summary: &mut BTreeMap<String, f64>) -> Result<Vec<QueueSweepRow>, RunError> {
    let q = cfg.queue_sweep.as_ref().unwrap();
    let err = sim_err("queue_sweep");
    let mut rows = Vec::new();
    for (i, delay) in q.delays.iter().enumerate() {
        for (name, strategy) in [("proactive", Strategy::Proactive { nodes: q.placeholder_nodes }), ("reactive", Strategy::Reactive)] {
            // both strategies see the same random stream
            let mut pc = pilot_config(cfg, "queue_sweep", i as u64);
            pc.system = SystemSpec { queue_delay: delay.clone(), ..pc.system };
            pc.strategy = strategy;
            let (mut f, idx) = facility(pc, sub_seed(cfg.seed, "queue_sweep.net", i as u64)).map_err(&err)?;
            for k in 0..q.alerts as u64 {
                let at = SimTime::from_secs_f64((k + 1) as f64 * q.interval_s);
                f.schedule(at, move |f| {
                    let (b, id) = request(k);
                    let _ = f.append_local(&NodeId::new(HPC), cups::REQUEST_LOG, &b, id);
                });
            }
            let horizon = SimTime::from_secs_f64((q.alerts as f64 + 1.0) * q.interval_s + 30.0 * 24.0 * 3600.0);
            drain_tasks(&mut f, idx, q.alerts, horizon);
            let ctl: &PilotController = f.service(idx).unwrap();
            let label = delay_label(delay);
            let mut turn = Vec::new();
            for (k, t) in ctl.tasks().iter().enumerate() {
                if let Some(c) = t.completed_at {
                    let x = (c - t.requested_at).as_secs_f64();
                    turn.push(x);
                    raw.queue.push(QueueSample {
                        delay: label.clone(),
                        strategy: name.into(),
                        task: k,
                        requested_at_s: t.requested_at.as_secs_f64(),
                        completed_at_s: c.as_secs_f64(),
                        turnaround_s: x,
                    });
                }
            }
            mon.check(&format!("queue_sweep {label} {name}: every alert completes"), turn.len() == q.alerts, format!("{} of {}", turn.len(), q.alerts));
            let (mean, sd) = mean_sd(&turn);
            summary.insert(format!("queue_sweep.{label}.{name}.mean_turnaround_s"), mean);
            rows.push(QueueSweepRow {
                delay: label,
                delay_mean_s: delay.mean_s(),
                strategy: name.into(),
                n: q.alerts,
                completed: turn.len(),
                mean_turnaround_s: mean,
                sd_turnaround_s: sd,
                max_turnaround_s: turn.iter().cloned().fold(0.0, f64::max),
            });
        }
    }
    Ok(rows)
}
