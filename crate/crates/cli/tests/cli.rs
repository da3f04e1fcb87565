use fabric_core::logstore::LogOptions;
use fabric_core::{LogStore, MessageId, SimTime};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fabric(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fabric")).args(args).output().expect("spawn fabric")
}

fn scenario(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn run_into(name: &str, out: &Path, extra: &[&str]) {
    let sc = scenario(name);
    let mut args = vec!["run", "--scenario", &sc, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = fabric(&args);
    assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

fn num(row: &BTreeMap<String, String>, k: &str) -> f64 {
    row[k].parse().unwrap_or_else(|_| panic!("{k} = {:?}", row[k]))
}

/// Mean and n-1 SD, written out longhand so it shares nothing with the
/// runner's code.
fn oracle(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12)
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let t = tempfile::tempdir().unwrap();
    for name in ["table1.toml", "queue_sweep.toml"] {
        let (a, b) = (t.path().join(format!("{name}-a")), t.path().join(format!("{name}-b")));
        run_into(name, &a, &["--trace"]);
        run_into(name, &b, &["--trace"]);
        let (fa, fb) = (files(&a), files(&b));
        assert!(fa.contains_key("report.json"));
        assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
        for (k, v) in &fa {
            assert!(v == &fb[k], "{name}: {k} differs between runs");
        }
    }
}

#[test]
fn different_seeds_differ() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    run_into("table1.toml", &a, &["--seed", "5"]);
    run_into("table1.toml", &b, &["--seed", "6"]);
    assert_ne!(std::fs::read(a.join("latency_raw.csv")).unwrap(), std::fs::read(b.join("latency_raw.csv")).unwrap());
}

#[test]
fn latency_summary_recomputes_from_raw() {
    let t = tempfile::tempdir().unwrap();
    run_into("table1.toml", t.path(), &[]);
    let raw = read_csv(&t.path().join("latency_raw.csv"));
    let summary = read_csv(&t.path().join("latency.csv"));
    assert_eq!(summary.len(), 3);
    for row in &summary {
        let xs: Vec<f64> = raw
            .iter()
            .filter(|r| r["path"] == row["path"] && r["discarded"] == "false")
            .map(|r| num(r, "latency_ms"))
            .collect();
        // one warm-up sample per path is left out
        assert_eq!(raw.iter().filter(|r| r["path"] == row["path"]).count(), xs.len() + 1);
        assert_eq!(xs.len(), num(row, "n") as usize);
        let (m, sd) = oracle(&xs);
        assert!(close(m, num(row, "mean_ms")), "{}: mean {m} vs {}", row["path"], row["mean_ms"]);
        assert!(close(sd, num(row, "sd_ms")), "{}: sd {sd} vs {}", row["path"], row["sd_ms"]);
    }
}

#[test]
fn slicing_summary_recomputes_from_raw() {
    let t = tempfile::tempdir().unwrap();
    run_into("slicing.toml", t.path(), &[]);
    let raw = read_csv(&t.path().join("slicing_raw.csv"));
    let summary = read_csv(&t.path().join("slicing.csv"));
    assert_eq!(summary.len(), 9);
    for row in &summary {
        for side in ["1", "2"] {
            let ue = &row[&format!("ue_{side}")];
            let xs: Vec<f64> = raw
                .iter()
                .filter(|r| r["config"] == row["config"] && &r["ue"] == ue)
                .map(|r| {
                    // each sample's rate is its bytes over its own window
                    let bits = num(r, "bytes") * 8.0;
                    let secs = (num(r, "end_us") - num(r, "start_us")) / 1e6;
                    assert!((bits / secs / 1e6 - num(r, "mbps")).abs() < 1e-6);
                    num(r, "mbps")
                })
                .collect();
            assert_eq!(xs.len(), num(row, "n") as usize);
            let (m, sd) = oracle(&xs);
            assert!(close(m, num(row, &format!("mean_mbps_{side}"))), "config {} ue {ue}", row["config"]);
            assert!(close(sd, num(row, &format!("sd_mbps_{side}"))), "config {} ue {ue}", row["config"]);
        }
        assert!((num(row, "fraction_1") + num(row, "fraction_2") - 1.0).abs() < 1e-12);
    }
}

#[test]
fn queue_summary_recomputes_from_raw() {
    let t = tempfile::tempdir().unwrap();
    run_into("queue_sweep.toml", t.path(), &[]);
    let raw = read_csv(&t.path().join("queue_sweep_raw.csv"));
    let summary = read_csv(&t.path().join("queue_sweep.csv"));
    assert_eq!(summary.len(), 12);
    for row in &summary {
        let xs: Vec<f64> = raw
            .iter()
            .filter(|r| r["delay"] == row["delay"] && r["strategy"] == row["strategy"])
            .map(|r| {
                assert!((num(r, "completed_at_s") - num(r, "requested_at_s") - num(r, "turnaround_s")).abs() < 1e-6);
                num(r, "turnaround_s")
            })
            .collect();
        assert_eq!(xs.len(), num(row, "completed") as usize);
        let (m, sd) = oracle(&xs);
        assert!(close(m, num(row, "mean_turnaround_s")), "{} {}", row["delay"], row["strategy"]);
        assert!(close(sd, num(row, "sd_turnaround_s")), "{} {}", row["delay"], row["strategy"]);
        let max = xs.iter().cloned().fold(f64::MIN, f64::max);
        assert!(close(max, num(row, "max_turnaround_s")));
    }
}

fn write_log(dir: &Path, n: u64) -> PathBuf {
    let store = LogStore::in_dir(dir, LogOptions { sync: false, ..LogOptions::default() }).unwrap();
    let log = store.create_log("t", 16, 8).unwrap();
    for i in 1..=n {
        log.append(format!("entry-{i}").as_bytes(), MessageId::derive(&[&i.to_le_bytes()]), SimTime(i * 10)).unwrap();
    }
    dir.join("t.log")
}

fn inspect(path: &Path) -> (Output, serde_json::Value) {
    let o = fabric(&["log", "inspect", path.to_str().unwrap()]);
    let v = if o.status.success() { serde_json::from_slice(&o.stdout).unwrap() } else { serde_json::Value::Null };
    (o, v)
}

#[test]
fn inspect_fresh_log_has_no_entries() {
    let t = tempfile::tempdir().unwrap();
    let (o, v) = inspect(&write_log(t.path(), 0));
    assert!(o.status.success());
    assert_eq!(v["entries"].as_array().unwrap().len(), 0);
    assert_eq!(v["header"]["next_seq"], 1);
    assert_eq!(v["recovery"]["torn_record_discarded"], false);
}

#[test]
fn inspect_lists_entries_in_order() {
    let t = tempfile::tempdir().unwrap();
    let (o, v) = inspect(&write_log(t.path(), 3));
    assert!(o.status.success());
    let entries = v["entries"].as_array().unwrap();
    let seqs: Vec<u64> = entries.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, [1, 2, 3]);
    // "entry-2" in hex
    assert_eq!(entries[1]["payload_hex"], "656e7472792d32");
    assert_eq!(entries[2]["created_at_us"], 30);
}

#[test]
fn inspect_diagnoses_torn_tail_without_repairing_it() {
    let t = tempfile::tempdir().unwrap();
    let path = write_log(t.path(), 3);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    let (o, v) = inspect(&path);
    assert!(o.status.success());
    assert_eq!(v["recovery"]["torn_record_discarded"], true);
    assert_eq!(v["entries"].as_array().unwrap().len(), 2);
    assert_eq!(std::fs::read(&path).unwrap().len(), bytes.len() - 5, "inspect must not write");
}

#[test]
fn inspect_missing_file_is_an_error() {
    let t = tempfile::tempdir().unwrap();
    let (o, _) = inspect(&t.path().join("absent.log"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_name_the_key() {
    let t = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(scenario("table1.toml")).unwrap();
    let cases = [
        (base.replace("count = 30", "count = 30\nbogus = 1"), "bogus"),
        (base.replace("count = 30", "count = 1"), "latency.count"),
        (base.replace("route = [\"ucsb-repo\", \"nd-hpc\"]", "route = [\"ucsb-repo\", \"nowhere\"]"), "latency.paths[2].route"),
    ];
    for (i, (text, key)) in cases.iter().enumerate() {
        let p = t.path().join(format!("bad{i}.toml"));
        std::fs::write(&p, text).unwrap();
        let o = fabric(&["run", "--scenario", p.to_str().unwrap(), "--out", t.path().join("o").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "case {i}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(key), "case {i}: {err:?} does not name {key}");
    }
}

#[test]
fn sweep_writes_one_directory_per_seed() {
    let t = tempfile::tempdir().unwrap();
    let o = fabric(&["sweep", "--scenario", &scenario("table1.toml"), "--seeds", "3..=5", "--out", t.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for s in 3..=5 {
        assert!(t.path().join(format!("seed-{s}/latency.csv")).exists());
    }
    assert!(!t.path().join("seed-6").exists());
    let rows = read_csv(&t.path().join("sweep.csv"));
    let held: Vec<&String> = rows.iter().filter(|r| r["key"] == "invariants_held").map(|r| &r["value"]).collect();
    assert_eq!(held, ["1", "1", "1"]);

    // a sweep's per-seed output is the same as a single run with that seed
    let single = t.path().join("single");
    run_into("table1.toml", &single, &["--seed", "4"]);
    assert_eq!(std::fs::read(single.join("latency_raw.csv")).unwrap(), std::fs::read(t.path().join("seed-4/latency_raw.csv")).unwrap());
}
