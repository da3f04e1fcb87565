//! Two-sample tests used by the change detector. All are two-sided.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestName {
    WelchT,
    MannWhitneyU,
    KolmogorovSmirnov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub test_name: TestName,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

impl StatTestResult {
    fn new(test_name: TestName, statistic: f64, p_value: f64, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        StatTestResult { test_name, statistic, p_value, reject: p_value < alpha }
    }
}

/// Majority of three reject flags.
pub fn vote(r: [bool; 3]) -> bool {
    r.iter().filter(|x| **x).count() >= 2
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance t statistic and its Welch–Satterthwaite df.
pub fn welch_statistic(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let t = if ma == mb { 0.0 } else { f64::INFINITY.copysign(ma - mb) };
        return (t, (a.len() + b.len() - 2) as f64);
    }
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    ((ma - mb) / se2.sqrt(), df)
}

pub fn welch_t(a: &[f64], b: &[f64], alpha: f64) -> StatTestResult {
    let (t, df) = welch_statistic(a, b);
    let p = if t.is_infinite() {
        0.0
    } else if t == 0.0 {
        1.0
    } else {
        let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    StatTestResult::new(TestName::WelchT, t, p, alpha)
}

/// Midranks of the pooled sample, plus the tie-group sizes.
fn ranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut pooled: Vec<(f64, usize)> = a.iter().chain(b).copied().enumerate().map(|(i, x)| (x, i)).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut r = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[pooled[k].1] = mid;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (r, ties)
}

/// U statistic of the first sample: pairs (x, y) with x > y, ties count half.
pub fn mann_whitney_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (r, _) = ranks(a, b);
    let n1 = a.len() as f64;
    r[..a.len()].iter().sum::<f64>() - n1 * (n1 + 1.0) / 2.0
}

/// Number of arrangements giving each U value, for sample sizes `m`, `n`.
fn u_counts(m: usize, n: usize) -> Vec<f64> {
    // f[i][j][u] built up on a rolling table over j
    let max = m * n;
    let mut table = vec![vec![vec![0.0f64; max + 1]; n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            if i == 0 || j == 0 {
                table[i][j][0] = 1.0;
                continue;
            }
            for u in 0..=i * j {
                let mut c = table[i][j - 1][u];
                if u >= j {
                    c += table[i - 1][j][u - j];
                }
                table[i][j][u] = c;
            }
        }
    }
    table[m][n].clone()
}

const EXACT_LIMIT: usize = 50;

pub fn mann_whitney_u(a: &[f64], b: &[f64], alpha: f64) -> StatTestResult {
    let (m, n) = (a.len(), b.len());
    let (r, ties) = ranks(a, b);
    let u = r[..m].iter().sum::<f64>() - (m * (m + 1)) as f64 / 2.0;
    let p = if ties.is_empty() && m <= EXACT_LIMIT && n <= EXACT_LIMIT {
        let counts = u_counts(m, n);
        let total: f64 = counts.iter().sum();
        let ui = u.round() as usize;
        let lower: f64 = counts[..=ui].iter().sum::<f64>() / total;
        let upper: f64 = counts[ui..].iter().sum::<f64>() / total;
        (2.0 * lower.min(upper)).min(1.0)
    } else {
        let (mf, nf) = (m as f64, n as f64);
        let big_n = mf + nf;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (big_n * (big_n - 1.0));
        let sigma = (mf * nf / 12.0 * ((big_n + 1.0) - tie_term)).sqrt();
        if sigma == 0.0 {
            1.0
        } else {
            let diff = (u - mf * nf / 2.0).abs();
            let z = ((diff - 0.5).max(0.0)) / sigma;
            2.0 * (1.0 - Normal::new(0.0, 1.0).unwrap().cdf(z))
        }
    };
    StatTestResult::new(TestName::MannWhitneyU, u, p, alpha)
}

/// KS distance scaled to an integer: `max |i*n - j*m|` over the step
/// functions, so comparisons are exact.
fn ks_scaled(a: &[f64], b: &[f64]) -> i64 {
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (m, n) = (xs.len() as i64, ys.len() as i64);
    let (mut i, mut j, mut best) = (0usize, 0usize, 0i64);
    while i < xs.len() || j < ys.len() {
        let v = match (xs.get(i), ys.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => unreachable!(),
        };
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
        while j < ys.len() && ys[j] == v {
            j += 1;
        }
        best = best.max((i as i64 * n - j as i64 * m).abs());
    }
    best
}

pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    ks_scaled(a, b) as f64 / (a.len() * b.len()) as f64
}

/// P(D >= d) under the null, by counting lattice paths that keep
/// `|i*n - j*m| < d_scaled`.
fn ks_exact_p(m: usize, n: usize, d_scaled: i64) -> f64 {
    let mut row = vec![0.0f64; n + 1];
    for i in 0..=m {
        for j in 0..=n {
            let inside = ((i * n) as i64 - (j * m) as i64).abs() < d_scaled;
            row[j] = if !inside {
                0.0
            } else if i == 0 && j == 0 {
                1.0
            } else {
                let up = if i > 0 { row[j] } else { 0.0 };
                let left = if j > 0 { row[j - 1] } else { 0.0 };
                up + left
            };
        }
        // row[j] now holds paths to (i, j)
    }
    let total = binomial(m + n, n);
    1.0 - row[n] / total
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Asymptotic Kolmogorov tail, used for large samples.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let s: f64 = (1..=100).map(|k| (-1f64).powi(k - 1) * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp()).sum();
    (2.0 * s).clamp(0.0, 1.0)
}

pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> StatTestResult {
    let (m, n) = (a.len(), b.len());
    let d_scaled = ks_scaled(a, b);
    let d = d_scaled as f64 / (m * n) as f64;
    let p = if d_scaled == 0 {
        1.0
    } else if m * n <= 10_000 {
        ks_exact_p(m, n, d_scaled)
    } else {
        let en = ((m * n) as f64 / (m + n) as f64).sqrt();
        kolmogorov_tail((en + 0.12 + 0.11 / en) * d)
    };
    StatTestResult::new(TestName::KolmogorovSmirnov, d, p, alpha)
}

/// Runs all three tests on one pair of samples.
pub fn all_tests(current: &[f64], previous: &[f64], alpha: f64) -> [StatTestResult; 3] {
    [welch_t(current, previous, alpha), mann_whitney_u(current, previous, alpha), ks_two_sample(current, previous, alpha)]
}
