use fabric_core::fabric::Fabric;
use fabric_core::netsim::{LinkSpec, Network, NodeSpec};
use fabric_core::pilot::{CfdCostModel, PilotConfig, Strategy, SystemSpec};
use fabric_core::pipeline::cups::{self, CupsConfig, CupsMetrics};
use fabric_core::pipeline::stats::{ks_two_sample, mann_whitney_u, welch_t};
use fabric_core::pipeline::*;
use fabric_core::transport::RetryPolicy;
use fabric_core::SimTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn topology(seed: u64) -> Network {
    let nodes: Vec<NodeSpec> =
        ["unl-edge", "ucsb-repo", "nd-hpc"].iter().map(|n| NodeSpec { name: (*n).into(), ue_efficiency: 1.0 }).collect();
    let links = [LinkSpec::new("unl-edge", "ucsb-repo", 25.25, 8.5), LinkSpec::new("ucsb-repo", "nd-hpc", 23.0, 0.5)];
    Network::from_specs(&nodes, &links, seed).unwrap()
}

fn shifted_weather() -> WeatherModel {
    let mut w = WeatherModel::default();
    w.wind_speed = ChannelModel { mean: 2.0, noise_sd: 0.3, shifts: vec![RegimeShift { at_s: 7200.0, mean: 6.0 }] };
    w
}

fn pilot() -> PilotConfig {
    PilotConfig {
        system: SystemSpec::default(),
        cost: CfdCostModel::default(),
        strategy: Strategy::Proactive { nodes: 1 },
        threshold_bytes: 1 << 20,
        task_cores: 64,
        count_queued: false,
        seed: 3,
    }
}

fn run(weather: WeatherModel, seed: u64) -> CupsMetrics {
    let mut f = Fabric::new(topology(seed), RetryPolicy::default());
    let d = cups::deploy(&mut f, CupsConfig::new(4 * 3600), weather, seed, pilot()).unwrap();
    f.run_until(SimTime::from_secs(5 * 3600));
    cups::collect(&f, &d).unwrap()
}

#[test]
fn shift_is_caught_in_the_first_window_after_it() {
    for seed in 0..20 {
        let m = run(shifted_weather(), seed);
        // a 4 h run has eight 30 min duty cycles; the first has no previous window
        assert_eq!(m.alerts.len(), 7, "seed {seed}");
        let alerts: Vec<u64> = m.alerts.iter().filter(|a| a.vote).map(|a| a.iteration).collect();
        // the window ending at 2 h 25 min is the first wholly after the 2 h shift
        assert!(alerts.contains(&5), "seed {seed}: {alerts:?}");
        assert_eq!(m.cfd_outputs, alerts.len(), "seed {seed}");
        assert_eq!(m.cfd_outputs + m.skips, 7, "seed {seed}");
        let t = m.tasks.iter().find(|t| t.iteration == 5).unwrap();
        // the result lives until the next duty cycle, less the run and transfers
        let overhead = cups::DUTY_CYCLE_S as f64 - t.validity_s.unwrap() - t.runtime_s.unwrap();
        assert!((0.0..10.0).contains(&overhead), "seed {seed}: {overhead}");
        // every task traces back to an alert that voted
        for t in &m.tasks {
            assert!(alerts.contains(&t.iteration));
            assert!(t.requested_at_s >= t.alert_at_s);
        }
    }
}

#[test]
fn steady_weather_rarely_alerts() {
    let (mut windows, mut alerts) = (0, 0);
    for seed in 0..40 {
        let m = run(WeatherModel::default(), seed);
        windows += m.alerts.len();
        alerts += m.alerts.iter().filter(|a| a.vote).count();
        assert_eq!(m.tasks.len(), m.alerts.iter().filter(|a| a.vote).count());
    }
    assert_eq!(windows, 40 * 7);
    // majority of three size-0.05 tests cannot exceed 0.075 in expectation
    let rate = alerts as f64 / windows as f64;
    assert!(rate <= 0.075 + 3.0 * (0.075f64 * 0.925 / windows as f64).sqrt(), "rate {rate}");
}

fn normal_window(rng: &mut ChaCha8Rng, mu: f64, sd: f64, start_s: u64) -> Window {
    let n = Normal::new(mu, sd).unwrap();
    let recs = (0..WINDOW_LEN as u64)
        .map(|k| TelemetryRecord {
            timestamp: SimTime::from_secs(start_s + k * CADENCE_S),
            wind_speed: n.sample(rng),
            wind_direction: 0.0,
            temperature: 0.0,
            humidity: 0.0,
            station_id: "s".into(),
        })
        .collect();
    Window::new(recs).unwrap()
}

#[test]
fn false_alert_rate_under_the_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trials = 1000;
    let (mut votes, mut welch, mut mw, mut ks) = (0, 0, 0, 0);
    for _ in 0..trials {
        let prev = normal_window(&mut rng, 2.0, 0.3, 0);
        let cur = normal_window(&mut rng, 2.0, 0.3, 1800);
        let a = detect_change(&cur, &prev, 0.05, &[Channel::WindSpeed]).unwrap();
        let r = &a.verdicts[0].results;
        votes += a.vote as usize;
        welch += r[0].reject as usize;
        mw += r[1].reject as usize;
        ks += r[2].reject as usize;
    }
    let rate = |k: usize| k as f64 / trials as f64;
    let se = (0.05f64 * 0.95 / trials as f64).sqrt();
    // each test is level 0.05 (the rank tests conservatively, being discrete)
    for (name, k) in [("welch", welch), ("mann-whitney", mw), ("ks", ks)] {
        assert!(rate(k) <= 0.05 + 3.0 * se, "{name} {}", rate(k));
    }
    assert!(rate(welch) >= 0.05 - 3.0 * se, "welch {}", rate(welch));
    assert!(rate(votes) <= 0.075, "vote {}", rate(votes));
}

#[test]
fn large_shift_always_alerts() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let prev = normal_window(&mut rng, 2.0, 0.3, 0);
        let cur = normal_window(&mut rng, 6.0, 0.3, 1800);
        let a = detect_change(&cur, &prev, 0.05, &[Channel::WindSpeed]).unwrap();
        assert!(a.vote);
        assert_eq!(a.channel, Some(Channel::WindSpeed));
        assert_eq!(a.timestamp, cur.end());
    }
}

/// Every way of splitting 12 pooled values into two groups of 6.
fn splits(pool: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = pool.len();
    (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == n / 2)
        .map(|mask| {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (i, &x) in pool.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    a.push(x)
                } else {
                    b.push(x)
                }
            }
            (a, b)
        })
        .collect()
}

fn u_brute(a: &[f64], b: &[f64]) -> usize {
    a.iter().map(|x| b.iter().filter(|y| x > y).count()).sum()
}

fn d_brute(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], t: f64| s.iter().filter(|x| **x <= t).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&t| (cdf(a, t) - cdf(b, t)).abs()).fold(0.0, f64::max)
}

#[test]
fn rank_test_p_values_match_full_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for shift in [0.0, 0.3, 0.8, 2.0] {
        let n = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..6).map(|_| n.sample(&mut rng) + shift).collect();
        let b: Vec<f64> = (0..6).map(|_| n.sample(&mut rng)).collect();
        let pool: Vec<f64> = a.iter().chain(&b).copied().collect();
        let all = splits(&pool);
        assert_eq!(all.len(), 924);

        let u = u_brute(&a, &b);
        let lower = all.iter().filter(|(x, y)| u_brute(x, y) <= u).count() as f64 / 924.0;
        let upper = all.iter().filter(|(x, y)| u_brute(x, y) >= u).count() as f64 / 924.0;
        let mw = mann_whitney_u(&a, &b, 0.05);
        assert_eq!(mw.statistic, u as f64);
        assert!((mw.p_value - (2.0 * lower.min(upper)).min(1.0)).abs() < 1e-12, "shift {shift}");

        let d = d_brute(&a, &b);
        let p = all.iter().filter(|(x, y)| d_brute(x, y) >= d - 1e-12).count() as f64 / 924.0;
        let ks = ks_two_sample(&a, &b, 0.05);
        assert!((ks.statistic - d).abs() < 1e-12);
        assert!((ks.p_value - p).abs() < 1e-12, "shift {shift}: {} vs {p}", ks.p_value);
    }
}

#[test]
fn welch_p_is_symmetric_and_shift_monotone() {
    let a = [1.9, 2.1, 2.4, 1.7, 2.0, 2.2];
    let mut last = 1.0;
    for k in 0..10 {
        let b: Vec<f64> = a.iter().rev().map(|x| x + 0.1 * k as f64).collect();
        let (p1, p2) = (welch_t(&a, &b, 0.05).p_value, welch_t(&b, &a, 0.05).p_value);
        assert!((p1 - p2).abs() < 1e-12);
        assert!(p1 <= last + 1e-12);
        last = p1;
    }
}

#[test]
fn telemetry_matches_its_model() {
    let w = shifted_weather();
    let recs = generate_telemetry(&w, 5, 30 * 24 * 3600).unwrap();
    assert_eq!(recs.len(), 30 * 24 * 12);
    for (k, r) in recs.iter().enumerate() {
        assert_eq!(r.timestamp, SimTime::from_secs(k as u64 * CADENCE_S));
        assert!((0.0..360.0).contains(&r.wind_direction));
        assert!((0.0..=100.0).contains(&r.humidity));
        assert_eq!(TelemetryRecord::decode(&r.encode()).unwrap(), *r);
    }
    let after: Vec<&TelemetryRecord> = recs.iter().filter(|r| r.timestamp.as_secs_f64() >= 7200.0).collect();
    let stat = |xs: Vec<f64>| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(), n)
    };
    let check = |name: &str, (m, sd, n): (f64, f64, f64), mu: f64, sigma: f64| {
        assert!((m - mu).abs() < 4.0 * sigma / n.sqrt(), "{name} mean {m}");
        assert!((sd / sigma - 1.0).abs() < 0.05, "{name} sd {sd}");
    };
    check("wind", stat(after.iter().map(|r| r.wind_speed).collect()), 6.0, 0.3);
    check("temperature", stat(recs.iter().map(|r| r.temperature).collect()), 24.0, 0.5);
    check("humidity", stat(recs.iter().map(|r| r.humidity).collect()), 60.0, 2.0);
    let before: Vec<f64> = recs.iter().filter(|r| r.timestamp.as_secs_f64() < 7200.0).map(|r| r.wind_speed).collect();
    assert_eq!(before.len(), 24);
    assert!((before.iter().sum::<f64>() / 24.0 - 2.0).abs() < 0.3);

    assert_eq!(generate_telemetry(&w, 5, 3600).unwrap(), generate_telemetry(&w, 5, 3600).unwrap());
    assert_ne!(generate_telemetry(&w, 5, 3600).unwrap(), generate_telemetry(&w, 6, 3600).unwrap());
}
