//! PRB-slicing throughput model for the private 5G edge.
//!
//! A UE holding a slice with PRB fraction `f` on a cell of base capacity
//! `B` sees a mean uplink throughput of `f * B * efficiency`, where the
//! per-UE efficiency captures device differences.

use super::NetError;
use crate::ids::NodeId;
use crate::time::{SimDuration, SimTime};
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceConfig {
    pub slice_id: u8,
    pub prb_fraction: f64,
    pub assigned_ue: NodeId,
}

impl SliceConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(1..=9).contains(&self.slice_id) {
            return Err(NetError::InvalidSlice(format!("slice_id {} outside 1..=9", self.slice_id)));
        }
        if !(self.prb_fraction > 0.0 && self.prb_fraction <= 1.0) {
            return Err(NetError::InvalidSlice(format!("prb_fraction {} outside (0, 1]", self.prb_fraction)));
        }
        Ok(())
    }
}

/// Sample-to-sample throughput variation around the model mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThroughputNoise {
    None,
    /// Multiplicative `(1 + N(0, sd))`, clamped at zero.
    Relative { sd: f64 },
    /// Log-normal with the model mean and a fixed absolute SD in Mbps.
    /// Stays positive at small fractions without biasing the mean.
    Absolute { sd_mbps: f64 },
}

impl Default for ThroughputNoise {
    fn default() -> Self {
        ThroughputNoise::Absolute { sd_mbps: 4.0 }
    }
}

impl ThroughputNoise {
    pub fn sample<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> f64 {
        if mean <= 0.0 {
            return 0.0;
        }
        match *self {
            ThroughputNoise::None => mean,
            ThroughputNoise::Relative { sd } => {
                let n = Normal::new(0.0, sd.max(0.0)).unwrap().sample(rng);
                (mean * (1.0 + n)).max(0.0)
            }
            ThroughputNoise::Absolute { sd_mbps } => {
                if sd_mbps <= 0.0 {
                    return mean;
                }
                let s2 = (1.0 + (sd_mbps / mean).powi(2)).ln();
                let mu = mean.ln() - s2 / 2.0;
                LogNormal::new(mu, s2.sqrt()).unwrap().sample(rng)
            }
        }
    }
}

/// Mean capacity in Mbps a UE with `efficiency` sees on its slice.
pub fn mean_capacity(base_capacity_mbps: f64, slice: &SliceConfig, efficiency: f64) -> f64 {
    slice.prb_fraction * base_capacity_mbps * efficiency
}

/// One sampled capacity draw, in Mbps.
pub fn effective_capacity<R: Rng + ?Sized>(
    base_capacity_mbps: f64,
    slice: &SliceConfig,
    efficiency: f64,
    noise: &ThroughputNoise,
    rng: &mut R,
) -> Result<f64, NetError> {
    slice.validate()?;
    Ok(noise.sample(mean_capacity(base_capacity_mbps, slice, efficiency), rng))
}

/// One timed bulk transfer, as an iperf-style sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferRecord {
    pub bytes: u64,
    pub start: SimTime,
    pub end: SimTime,
}

impl TransferRecord {
    pub fn achieved_mbps(&self) -> f64 {
        let secs = (self.end - self.start).as_secs_f64();
        if secs <= 0.0 {
            0.0
        } else {
            self.bytes as f64 * 8.0 / secs / 1e6
        }
    }
}

/// Back-to-back fixed-duration transfers on one slice, starting at `start`.
pub fn throughput_samples<R: Rng + ?Sized>(
    base_capacity_mbps: f64,
    slice: &SliceConfig,
    efficiency: f64,
    noise: &ThroughputNoise,
    start: SimTime,
    duration: SimDuration,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<TransferRecord>, NetError> {
    if duration == SimDuration::ZERO {
        return Err(NetError::Degenerate("trial duration must be positive".into()));
    }
    if samples == 0 {
        return Err(NetError::Degenerate("at least one sample required".into()));
    }
    let mut out = Vec::with_capacity(samples);
    let mut t = start;
    for _ in 0..samples {
        let mbps = effective_capacity(base_capacity_mbps, slice, efficiency, noise, rng)?;
        let bytes = (mbps * 1e6 * duration.as_secs_f64() / 8.0).round() as u64;
        out.push(TransferRecord { bytes, start: t, end: t + duration });
        t += duration;
    }
    Ok(out)
}

/// Result of fitting the proportional model to measured (fraction, mean)
/// points of a reference UE (efficiency pinned to 1) and a second UE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicingFit {
    pub base_capacity_mbps: f64,
    pub other_efficiency: f64,
}

/// Least-squares fit of `y = f * B` (reference UE) and `y = f * B * e`
/// (other UE). The two sums of squares separate, so each has a closed form.
pub fn fit_slicing(reference: &[(f64, f64)], other: &[(f64, f64)]) -> SlicingFit {
    let through_origin = |pts: &[(f64, f64)]| {
        let sxy: f64 = pts.iter().map(|(f, y)| f * y).sum();
        let sxx: f64 = pts.iter().map(|(f, _)| f * f).sum();
        sxy / sxx
    };
    let base = through_origin(reference);
    SlicingFit { base_capacity_mbps: base, other_efficiency: through_origin(other) / base }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn slice(f: f64) -> SliceConfig {
        SliceConfig { slice_id: 1, prb_fraction: f, assigned_ue: NodeId::new("ue") }
    }

    #[test]
    fn mean_scales_with_fraction() {
        assert!((mean_capacity(48.3, &slice(0.1), 1.0) - 4.83).abs() < 1e-12);
        assert!((mean_capacity(48.3, &slice(0.9), 1.0) - 43.47).abs() < 1e-9);
    }

    #[test]
    fn invalid_slices_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(effective_capacity(48.0, &slice(0.0), 1.0, &ThroughputNoise::None, &mut rng).is_err());
        assert!(effective_capacity(48.0, &slice(1.2), 1.0, &ThroughputNoise::None, &mut rng).is_err());
        let bad_id = SliceConfig { slice_id: 10, ..slice(0.5) };
        assert!(bad_id.validate().is_err());
    }

    #[test]
    fn absolute_noise_keeps_mean_and_sd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = ThroughputNoise::Absolute { sd_mbps: 4.0 };
        let xs: Vec<f64> = (0..200_000).map(|_| noise.sample(4.9, &mut rng)).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!((m - 4.9).abs() < 0.05, "{m}");
        assert!((sd - 4.0).abs() < 0.15, "{sd}");
        assert!(xs.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn achieved_rate_is_bytes_over_time() {
        let r = TransferRecord { bytes: 3_000_000, start: SimTime(0), end: SimTime(1_000_000) };
        assert!((r.achieved_mbps() - 24.0).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_exact_model() {
        let fr = [0.1, 0.5, 0.9];
        let reference: Vec<_> = fr.iter().map(|f| (*f, f * 50.0)).collect();
        let other: Vec<_> = fr.iter().map(|f| (*f, f * 40.0)).collect();
        let fit = fit_slicing(&reference, &other);
        assert!((fit.base_capacity_mbps - 50.0).abs() < 1e-12);
        assert!((fit.other_efficiency - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_duration_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = throughput_samples(48.0, &slice(0.5), 1.0, &ThroughputNoise::None, SimTime(0), SimDuration::ZERO, 3, &mut rng);
        assert!(matches!(r, Err(NetError::Degenerate(_))));
    }
}
