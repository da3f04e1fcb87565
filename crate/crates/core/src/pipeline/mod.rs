//! The CUPS telemetry application: synthetic weather stations, fixed-layout
//! telemetry records, and windowed change detection.

pub mod cups;
pub mod stats;

use crate::time::SimTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
pub use stats::{vote, StatTestResult, TestName};

/// Reporting interval of the stations, in seconds.
pub const CADENCE_S: u64 = 300;
/// Records per detection window (30 minutes).
pub const WINDOW_LEN: usize = 6;
pub const RECORD_LEN: usize = 72;
const STATION_LEN: usize = 31;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PipelineError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("malformed telemetry record")]
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    WindSpeed,
    WindDirection,
    Temperature,
    Humidity,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::WindSpeed, Channel::WindDirection, Channel::Temperature, Channel::Humidity];

    pub fn name(&self) -> &'static str {
        match self {
            Channel::WindSpeed => "wind_speed",
            Channel::WindDirection => "wind_direction",
            Channel::Temperature => "temperature",
            Channel::Humidity => "humidity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub timestamp: SimTime,
    /// m/s
    pub wind_speed: f64,
    /// degrees in [0, 360)
    pub wind_direction: f64,
    /// °C
    pub temperature: f64,
    /// %RH in [0, 100]
    pub humidity: f64,
    pub station_id: String,
}

impl TelemetryRecord {
    pub fn get(&self, c: Channel) -> f64 {
        match c {
            Channel::WindSpeed => self.wind_speed,
            Channel::WindDirection => self.wind_direction,
            Channel::Temperature => self.temperature,
            Channel::Humidity => self.humidity,
        }
    }

    /// 72 bytes: timestamp µs, four f64 channels, then the station id as a
    /// length byte plus 31 zero-padded bytes. All little-endian.
    pub fn encode(&self) -> [u8; RECORD_LEN] {
        let mut b = [0u8; RECORD_LEN];
        b[0..8].copy_from_slice(&self.timestamp.0.to_le_bytes());
        for (i, c) in Channel::ALL.iter().enumerate() {
            b[8 + 8 * i..16 + 8 * i].copy_from_slice(&self.get(*c).to_le_bytes());
        }
        let id = self.station_id.as_bytes();
        let n = id.len().min(STATION_LEN);
        b[40] = n as u8;
        b[41..41 + n].copy_from_slice(&id[..n]);
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, PipelineError> {
        if b.len() < RECORD_LEN {
            return Err(PipelineError::Malformed);
        }
        let f = |i: usize| f64::from_le_bytes(b[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let n = b[40] as usize;
        if n > STATION_LEN {
            return Err(PipelineError::Malformed);
        }
        Ok(TelemetryRecord {
            timestamp: SimTime(u64::from_le_bytes(b[0..8].try_into().unwrap())),
            wind_speed: f(0),
            wind_direction: f(1),
            temperature: f(2),
            humidity: f(3),
            station_id: String::from_utf8(b[41..41 + n].to_vec()).map_err(|_| PipelineError::Malformed)?,
        })
    }
}

/// A step change in one channel's mean at `at_s` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeShift {
    pub at_s: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub mean: f64,
    pub noise_sd: f64,
    #[serde(default)]
    pub shifts: Vec<RegimeShift>,
}

impl ChannelModel {
    pub fn constant(mean: f64, noise_sd: f64) -> Self {
        ChannelModel { mean, noise_sd, shifts: Vec::new() }
    }

    pub fn mean_at(&self, t_s: f64) -> f64 {
        self.shifts.iter().filter(|s| s.at_s <= t_s).max_by(|a, b| a.at_s.total_cmp(&b.at_s)).map(|s| s.mean).unwrap_or(self.mean)
    }
}

/// Piecewise-constant means plus Gaussian sensor noise, per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherModel {
    #[serde(default = "default_station")]
    pub station_id: String,
    pub wind_speed: ChannelModel,
    pub wind_direction: ChannelModel,
    pub temperature: ChannelModel,
    pub humidity: ChannelModel,
}

fn default_station() -> String {
    "cups-1".into()
}

impl Default for WeatherModel {
    fn default() -> Self {
        WeatherModel {
            station_id: default_station(),
            wind_speed: ChannelModel::constant(2.0, 0.3),
            wind_direction: ChannelModel::constant(180.0, 10.0),
            temperature: ChannelModel::constant(24.0, 0.5),
            humidity: ChannelModel::constant(60.0, 2.0),
        }
    }
}

impl WeatherModel {
    pub fn channel(&self, c: Channel) -> &ChannelModel {
        match c {
            Channel::WindSpeed => &self.wind_speed,
            Channel::WindDirection => &self.wind_direction,
            Channel::Temperature => &self.temperature,
            Channel::Humidity => &self.humidity,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for c in Channel::ALL {
            let m = self.channel(c);
            if !(m.noise_sd >= 0.0 && m.noise_sd.is_finite()) {
                return Err(PipelineError::Degenerate(format!("{} noise_sd must be a non-negative number", c.name())));
            }
        }
        Ok(())
    }

    /// One record at time `t` drawn from `rng`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, t: SimTime, rng: &mut R) -> TelemetryRecord {
        let ts = t.as_secs_f64();
        let mut draw = |c: Channel| {
            let m = self.channel(c);
            let mu = m.mean_at(ts);
            if m.noise_sd == 0.0 {
                mu
            } else {
                Normal::new(mu, m.noise_sd).unwrap().sample(rng)
            }
        };
        TelemetryRecord {
            timestamp: t,
            wind_speed: draw(Channel::WindSpeed).max(0.0),
            wind_direction: draw(Channel::WindDirection).rem_euclid(360.0),
            temperature: draw(Channel::Temperature),
            humidity: draw(Channel::Humidity).clamp(0.0, 100.0),
            station_id: self.station_id.clone(),
        }
    }
}

/// Records at `0, 300, 600, ...` seconds, strictly before `duration_s`.
pub fn generate_telemetry(model: &WeatherModel, seed: u64, duration_s: u64) -> Result<Vec<TelemetryRecord>, PipelineError> {
    if duration_s < 2 * CADENCE_S {
        return Err(PipelineError::Degenerate(format!("duration {duration_s} s is shorter than two reporting intervals")));
    }
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..duration_s.div_ceil(CADENCE_S)).map(|k| model.sample(SimTime::from_secs(k * CADENCE_S), &mut rng)).collect())
}

/// Six consecutive records, 300 s apart.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    records: Vec<TelemetryRecord>,
}

impl Window {
    pub fn new(records: Vec<TelemetryRecord>) -> Result<Self, PipelineError> {
        if records.len() != WINDOW_LEN {
            return Err(PipelineError::InvalidWindow(format!("{} records, need {WINDOW_LEN}", records.len())));
        }
        for w in records.windows(2) {
            if w[1].timestamp.0 != w[0].timestamp.0 + CADENCE_S * 1_000_000 {
                return Err(PipelineError::InvalidWindow(format!(
                    "records at {} s and {} s are not one interval apart",
                    w[0].timestamp.as_secs_f64(),
                    w[1].timestamp.as_secs_f64()
                )));
            }
        }
        Ok(Window { records })
    }

    pub fn records(&self) -> &[TelemetryRecord] {
        &self.records
    }

    pub fn start(&self) -> SimTime {
        self.records[0].timestamp
    }

    pub fn end(&self) -> SimTime {
        self.records[WINDOW_LEN - 1].timestamp
    }

    pub fn values(&self, c: Channel) -> Vec<f64> {
        self.records.iter().map(|r| r.get(c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelVerdict {
    pub channel: Channel,
    pub results: [StatTestResult; 3],
    pub vote: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeAlert {
    /// End of the current window.
    pub timestamp: SimTime,
    pub verdicts: Vec<ChannelVerdict>,
    /// OR over the per-channel majority votes.
    pub vote: bool,
    /// First channel whose vote fired.
    pub channel: Option<Channel>,
}

pub fn detect_change(current: &Window, previous: &Window, alpha: f64, channels: &[Channel]) -> Result<ChangeAlert, PipelineError> {
    if previous.end() >= current.start() {
        return Err(PipelineError::InvalidWindow("windows overlap or are out of order".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) || channels.is_empty() {
        return Err(PipelineError::Degenerate("alpha must lie in (0, 1) and at least one channel is needed".into()));
    }
    let verdicts: Vec<ChannelVerdict> = channels
        .iter()
        .map(|&c| {
            let results = stats::all_tests(&current.values(c), &previous.values(c), alpha);
            ChannelVerdict { channel: c, vote: vote(results.map(|r| r.reject)), results }
        })
        .collect();
    let channel = verdicts.iter().find(|v| v.vote).map(|v| v.channel);
    Ok(ChangeAlert { timestamp: current.end(), vote: channel.is_some(), channel, verdicts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trips_in_72_bytes() {
        let r = TelemetryRecord {
            timestamp: SimTime::from_secs(900),
            wind_speed: 3.5,
            wind_direction: 271.0,
            temperature: -2.25,
            humidity: 99.5,
            station_id: "unl-station-7".into(),
        };
        let b = r.encode();
        assert_eq!(b.len(), 72);
        assert_eq!(TelemetryRecord::decode(&b).unwrap(), r);
    }

    #[test]
    fn short_duration_is_rejected() {
        assert!(generate_telemetry(&WeatherModel::default(), 0, 300).is_err());
    }

    #[test]
    fn mean_at_uses_latest_shift() {
        let m = ChannelModel { mean: 2.0, noise_sd: 0.0, shifts: vec![RegimeShift { at_s: 100.0, mean: 6.0 }, RegimeShift { at_s: 50.0, mean: 4.0 }] };
        assert_eq!(m.mean_at(0.0), 2.0);
        assert_eq!(m.mean_at(60.0), 4.0);
        assert_eq!(m.mean_at(100.0), 6.0);
    }

    #[test]
    fn window_requires_contiguous_cadence() {
        let recs = generate_telemetry(&WeatherModel::default(), 1, 3600).unwrap();
        assert!(Window::new(recs[0..6].to_vec()).is_ok());
        assert!(Window::new(recs[0..5].to_vec()).is_err());
        let mut gap = recs[0..6].to_vec();
        gap[5] = recs[7].clone();
        assert!(Window::new(gap).is_err());
    }
}
