use crate::netsim::Trace;
use crate::pipeline::cups::{AlertRow, HopSample, TaskRow};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Bumped whenever a field of [`MetricsReport`] changes meaning or name.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub path: String,
    pub route: String,
    pub size_cache: bool,
    pub payload_bytes: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub path: String,
    pub sample: usize,
    pub latency_ms: f64,
    /// The first sample carries connection start-up and is left out of the
    /// summary.
    pub discarded: bool,
}

/// One complementary configuration: the first UE at `fraction_1`, the
/// second at `fraction_2 = 1 - fraction_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub config: usize,
    pub ue_1: String,
    pub fraction_1: f64,
    pub mean_mbps_1: f64,
    pub sd_mbps_1: f64,
    pub ue_2: String,
    pub fraction_2: f64,
    pub mean_mbps_2: f64,
    pub sd_mbps_2: f64,
    /// Samples behind each UE's mean (trials times samples).
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSample {
    pub config: usize,
    pub ue: String,
    pub fraction: f64,
    pub trial: usize,
    pub sample: usize,
    pub bytes: u64,
    pub start_us: u64,
    pub end_us: u64,
    pub mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicingReport {
    pub base_capacity_mbps: f64,
    pub ue_efficiency: [f64; 2],
    pub rows: Vec<SliceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfdReport {
    pub cores: u32,
    pub nodes: u32,
    pub n: usize,
    pub mean_s: f64,
    pub sd_s: f64,
    pub model_mean_s: f64,
    pub model_sd_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub bin_lo_s: f64,
    pub bin_hi_s: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopSummary {
    pub hop: String,
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub evaluated_windows: usize,
    pub alert_iterations: Vec<u64>,
    pub cfd_outputs: usize,
    pub skips: usize,
    pub hops: Vec<HopSummary>,
    pub tasks: Vec<TaskRow>,
    pub frames_sent: u64,
    pub frames_dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SustainedReport {
    pub tasks: usize,
    pub first_start_s: f64,
    pub last_completion_s: f64,
    /// `(last completion - first start) / tasks`.
    pub mean_interval_s: f64,
    pub completions_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSweepRow {
    pub delay: String,
    pub delay_mean_s: f64,
    pub strategy: String,
    pub n: usize,
    pub completed: usize,
    pub mean_turnaround_s: f64,
    pub sd_turnaround_s: f64,
    pub max_turnaround_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub delay: String,
    pub strategy: String,
    pub task: usize,
    pub requested_at_s: f64,
    pub completed_at_s: f64,
    pub turnaround_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub held: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub latency: Vec<LatencyRow>,
    pub slicing: Option<SlicingReport>,
    pub cfd: Option<CfdReport>,
    pub pipeline: Option<PipelineReport>,
    pub sustained: Option<SustainedReport>,
    pub queue_sweep: Vec<QueueSweepRow>,
    pub invariants: Vec<InvariantCheck>,
    /// Flat scalars, convenient for sweeps.
    pub summary: BTreeMap<String, f64>,
    /// Digest of each simulated network's event trace.
    pub trace_digests: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn all_invariants_held(&self) -> bool {
        self.invariants.iter().all(|c| c.held)
    }
}

/// Everything a summary in the report was computed from.
#[derive(Debug, Clone, Default)]
pub struct RawSeries {
    pub latency: Vec<LatencySample>,
    pub slicing: Vec<SliceSample>,
    pub runtimes_s: Vec<f64>,
    pub runtime_hist: Vec<HistBin>,
    pub hops: Vec<HopSample>,
    pub alerts: Vec<AlertRow>,
    pub queue: Vec<QueueSample>,
    pub traces: BTreeMap<String, Trace>,
}

pub struct RunOutput {
    pub report: MetricsReport,
    pub raw: RawSeries,
}

#[derive(Serialize)]
struct AlertCsv<'a> {
    iteration: u64,
    window_end_s: f64,
    detected_at_s: f64,
    vote: bool,
    channel: &'a str,
    welch_p: f64,
    mann_whitney_p: f64,
    ks_p: f64,
    welch_reject: bool,
    mann_whitney_reject: bool,
    ks_reject: bool,
}

#[derive(Serialize)]
struct TaskCsv {
    iteration: u64,
    alert_at_s: f64,
    requested_at_s: f64,
    pilot: Option<u64>,
    pilot_submitted_at_s: Option<f64>,
    pilot_activated_at_s: Option<f64>,
    started_at_s: Option<f64>,
    completed_at_s: Option<f64>,
    runtime_s: Option<f64>,
    attempts: u32,
    validity_s: Option<f64>,
}

#[derive(Serialize)]
struct RuntimeCsv {
    sample: usize,
    runtime_s: f64,
}

#[derive(Serialize)]
struct CompletionCsv {
    task: usize,
    completed_at_s: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Writes `report.json` and the CSVs of every section that ran. Returns the
/// file names written, in order.
pub fn write_outputs(dir: &Path, out: &RunOutput, with_trace: bool) -> std::io::Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let r = &out.report;
    let raw = &out.raw;
    let mut files = Vec::new();
    let mut put = |name: &str| files.push(name.to_string());

    let json = serde_json::to_string_pretty(r).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    put("report.json");

    if !r.latency.is_empty() {
        write_csv(&dir.join("latency.csv"), &r.latency)?;
        write_csv(&dir.join("latency_raw.csv"), &raw.latency)?;
        put("latency.csv");
        put("latency_raw.csv");
    }
    if let Some(s) = &r.slicing {
        write_csv(&dir.join("slicing.csv"), &s.rows)?;
        write_csv(&dir.join("slicing_raw.csv"), &raw.slicing)?;
        put("slicing.csv");
        put("slicing_raw.csv");
    }
    if r.cfd.is_some() {
        write_csv(&dir.join("runtime_raw.csv"), raw.runtimes_s.iter().enumerate().map(|(i, x)| RuntimeCsv { sample: i, runtime_s: *x }))?;
        write_csv(&dir.join("runtime_hist.csv"), &raw.runtime_hist)?;
        put("runtime_raw.csv");
        put("runtime_hist.csv");
    }
    if let Some(p) = &r.pipeline {
        write_csv(&dir.join("hops.csv"), &raw.hops)?;
        let alerts = raw.alerts.iter().map(|a| {
            let v = a.alert.verdicts.iter().find(|v| Some(v.channel) == a.channel).unwrap_or(&a.alert.verdicts[0]);
            AlertCsv {
                iteration: a.iteration,
                window_end_s: a.window_end_s,
                detected_at_s: a.detected_at_s,
                vote: a.vote,
                channel: v.channel.name(),
                welch_p: v.results[0].p_value,
                mann_whitney_p: v.results[1].p_value,
                ks_p: v.results[2].p_value,
                welch_reject: v.results[0].reject,
                mann_whitney_reject: v.results[1].reject,
                ks_reject: v.results[2].reject,
            }
        });
        write_csv(&dir.join("alerts.csv"), alerts)?;
        let tasks = p.tasks.iter().map(|t| TaskCsv {
            iteration: t.iteration,
            alert_at_s: t.alert_at_s,
            requested_at_s: t.requested_at_s,
            pilot: t.pilot,
            pilot_submitted_at_s: t.pilot_submitted_at_s,
            pilot_activated_at_s: t.pilot_activated_at_s,
            started_at_s: t.started_at_s,
            completed_at_s: t.completed_at_s,
            runtime_s: t.runtime_s,
            attempts: t.attempts,
            validity_s: t.validity_s,
        });
        write_csv(&dir.join("tasks.csv"), tasks)?;
        put("hops.csv");
        put("alerts.csv");
        put("tasks.csv");
    }
    if let Some(s) = &r.sustained {
        write_csv(&dir.join("sustained.csv"), s.completions_s.iter().enumerate().map(|(i, c)| CompletionCsv { task: i, completed_at_s: *c }))?;
        put("sustained.csv");
    }
    if !r.queue_sweep.is_empty() {
        write_csv(&dir.join("queue_sweep.csv"), &r.queue_sweep)?;
        write_csv(&dir.join("queue_sweep_raw.csv"), &raw.queue)?;
        put("queue_sweep.csv");
        put("queue_sweep_raw.csv");
    }
    if with_trace {
        for (name, t) in &raw.traces {
            let file = format!("trace_{name}.jsonl");
            t.write_jsonl(std::io::BufWriter::new(std::fs::File::create(dir.join(&file))?))?;
            put(&file);
        }
    }
    Ok(files)
}
