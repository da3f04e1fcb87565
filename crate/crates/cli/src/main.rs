use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fabric_core::logstore;
use fabric_core::scenario::{self, RunOutput, ScenarioConfig};
use rayon::prelude::*;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Log-based fabric simulator.
#[derive(Parser)]
#[command(name = "fabric", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its metrics.
    Run(RunArgs),
    /// Run one scenario for every seed in a range, in parallel.
    Sweep(SweepArgs),
    /// Log file tools.
    Log {
        #[command(subcommand)]
        cmd: LogCmd,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: out/<scenario name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the network event traces as JSON lines.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// `A..B` (B excluded) or `A..=B`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Range<u64>,
    /// Output directory (default: out/<scenario name>-sweep).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LogCmd {
    /// Dump a log file's header and entries as JSON.
    Inspect { path: PathBuf },
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let bad = || format!("expected A..B or A..=B, got {s:?}");
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(bad());
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let end = if inclusive { b + 1 } else { b };
    if end <= a {
        return Err(format!("empty seed range {s:?}"));
    }
    Ok(a..end)
}

/// Exit status for a scenario that ran but broke an invariant.
const INVARIANT_FAILED: u8 = 1;
/// Exit status for a scenario that could not be loaded or run.
const CONFIG_ERROR: u8 = 2;

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path).with_context(|| format!("scenario {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_summary(out: &RunOutput) {
    let r = &out.report;
    println!("scenario {} seed {}", r.scenario, r.seed);
    for row in &r.latency {
        println!("  latency  {:<28} mean {:>9.3} ms  sd {:>8.3} ms  n {}", row.path, row.mean_ms, row.sd_ms, row.n);
    }
    if let Some(s) = &r.slicing {
        for row in &s.rows {
            println!(
                "  slicing  config {}  {} {:.0}% {:>6.2} Mbps (sd {:.2})  {} {:.0}% {:>6.2} Mbps (sd {:.2})",
                row.config,
                row.ue_1,
                row.fraction_1 * 100.0,
                row.mean_mbps_1,
                row.sd_mbps_1,
                row.ue_2,
                row.fraction_2 * 100.0,
                row.mean_mbps_2,
                row.sd_mbps_2
            );
        }
    }
    if let Some(c) = &r.cfd {
        println!("  cfd      {} samples at {} cores: mean {:.2} s  sd {:.2} s", c.n, c.cores, c.mean_s, c.sd_s);
    }
    if let Some(p) = &r.pipeline {
        println!("  pipeline {} windows evaluated, alerts at iterations {:?}", p.evaluated_windows, p.alert_iterations);
        for t in &p.tasks {
            println!(
                "  task     iteration {} completed at {:?} s, validity {:?} s",
                t.iteration,
                t.completed_at_s,
                t.validity_s
            );
        }
    }
    if let Some(s) = &r.sustained {
        println!("  sustained {} tasks, one every {:.1} s", s.tasks, s.mean_interval_s);
    }
    for q in &r.queue_sweep {
        println!("  queue    {:<24} {:<9} mean turnaround {:>9.1} s", q.delay, q.strategy, q.mean_turnaround_s);
    }
    for c in r.invariants.iter().filter(|c| !c.held) {
        println!("  INVARIANT VIOLATED: {} ({})", c.name, c.detail);
    }
}

fn cmd_run(a: RunArgs) -> Result<u8> {
    let cfg = load(&a.scenario, a.seed)?;
    let out_dir = a.out.unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let out = scenario::run(&cfg)?;
    let files = scenario::write_outputs(&out_dir, &out, a.trace).with_context(|| format!("writing {}", out_dir.display()))?;
    print_summary(&out);
    println!("wrote {} files to {}", files.len(), out_dir.display());
    Ok(if out.report.all_invariants_held() { 0 } else { INVARIANT_FAILED })
}

fn cmd_sweep(a: SweepArgs) -> Result<u8> {
    let base = load(&a.scenario, None)?;
    let out_dir = a.out.unwrap_or_else(|| PathBuf::from("out").join(format!("{}-sweep", base.name)));
    let seeds: Vec<u64> = a.seeds.collect();
    // independent simulations, one per seed
    let results: Vec<Result<(u64, RunOutput)>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            let out = scenario::run(&cfg)?;
            scenario::write_outputs(&out_dir.join(format!("seed-{seed}")), &out, false)?;
            Ok((seed, out))
        })
        .collect();
    let mut w = csv::Writer::from_path(out_dir.join("sweep.csv"))?;
    w.write_record(["seed", "key", "value"])?;
    let mut failed = Vec::new();
    for r in results {
        let (seed, out) = r?;
        for (k, v) in &out.report.summary {
            w.write_record([seed.to_string(), k.clone(), v.to_string()])?;
        }
        w.write_record([seed.to_string(), "invariants_held".into(), (out.report.all_invariants_held() as u8).to_string()])?;
        if !out.report.all_invariants_held() {
            failed.push(seed);
        }
    }
    w.flush()?;
    println!("swept {} seeds into {}", seeds.len(), out_dir.display());
    if !failed.is_empty() {
        println!("invariants violated for seeds {failed:?}");
        return Ok(INVARIANT_FAILED);
    }
    Ok(0)
}

fn cmd_inspect(path: &Path) -> Result<u8> {
    if !path.exists() {
        bail!("no such file: {}", path.display());
    }
    let dump = logstore::inspect(path).with_context(|| format!("inspecting {}", path.display()))?;
    println!("{}", serde_json::to_string_pretty(&dump)?);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Log { cmd: LogCmd::Inspect { path } } => cmd_inspect(&path),
    };
    match r {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(CONFIG_ERROR)
        }
    }
}
