//! Deterministic discrete-event network simulator.
//!
//! Links carry a truncated-normal latency, optional loss and duplication,
//! scheduled partitions, and a serialization delay derived from link (or
//! slice) capacity. All randomness comes from one seeded stream, so a given
//! topology and seed always yields the same trace.

mod sched;
pub mod slicing;
pub mod trace;

pub use sched::Scheduler;
pub use slicing::{SliceConfig, ThroughputNoise, TransferRecord};
pub use trace::{Trace, TraceRecord};

use crate::ids::NodeId;
use crate::time::{SimDuration, SimTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Latency samples never fall below this floor.
pub const MIN_LATENCY_MS: f64 = 0.1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetError {
    #[error("no route from {0} to {1}")]
    RouteUnreachable(NodeId, NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid slice: {0}")]
    InvalidSlice(String),
    #[error("invalid link: {0}")]
    InvalidLink(String),
    #[error("degenerate request: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: NodeId,
    /// Relative uplink efficiency when this node is a UE on a sliced link.
    #[serde(default = "one")]
    pub ue_efficiency: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    #[serde(default)]
    pub label: Option<String>,
    pub latency_mean_ms: f64,
    #[serde(default)]
    pub latency_sd_ms: f64,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub dup_prob: f64,
    #[serde(default = "default_capacity")]
    pub base_capacity_mbps: f64,
    /// Extra delay paid by the first frame ever sent over the link.
    #[serde(default)]
    pub connect_penalty_ms: f64,
    /// `[start_s, end_s)` windows during which every frame is dropped.
    #[serde(default)]
    pub partitions: Vec<[f64; 2]>,
    #[serde(default)]
    pub slices: Vec<SliceConfig>,
    #[serde(default)]
    pub throughput_noise: ThroughputNoise,
}

fn default_capacity() -> f64 {
    1000.0
}

impl LinkSpec {
    pub fn new(a: &str, b: &str, latency_mean_ms: f64, latency_sd_ms: f64) -> Self {
        LinkSpec {
            a: NodeId::new(a),
            b: NodeId::new(b),
            label: None,
            latency_mean_ms,
            latency_sd_ms,
            loss_prob: 0.0,
            dup_prob: 0.0,
            base_capacity_mbps: default_capacity(),
            connect_penalty_ms: 0.0,
            partitions: Vec::new(),
            slices: Vec::new(),
            throughput_noise: ThroughputNoise::None,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidLink(format!("{}-{}: {m}", self.a, self.b)));
        if self.a == self.b {
            return bad("self loop".into());
        }
        if !(self.latency_mean_ms >= 0.0 && self.latency_sd_ms >= 0.0) {
            return bad("latency must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.loss_prob) || !(0.0..1.0).contains(&self.dup_prob) {
            return bad("loss_prob and dup_prob must lie in [0, 1)".into());
        }
        if !(self.base_capacity_mbps > 0.0) {
            return bad("base_capacity_mbps must be positive".into());
        }
        if self.partitions.iter().any(|[s, e]| !(s <= e)) {
            return bad("partition windows need start <= end".into());
        }
        for s in &self.slices {
            s.validate()?;
            if s.assigned_ue != self.a && s.assigned_ue != self.b {
                return bad(format!("slice {} assigned to non-endpoint {}", s.slice_id, s.assigned_ue));
            }
        }
        let total: f64 = self.slices.iter().map(|s| s.prb_fraction).sum();
        if total > 1.0 + 1e-9 {
            return bad(format!("slice fractions sum to {total} > 1"));
        }
        Ok(())
    }

    pub fn partitioned_at(&self, t: SimTime) -> bool {
        let s = t.as_secs_f64();
        self.partitions.iter().any(|[a, b]| s >= *a && s < *b)
    }

    pub fn slice_for(&self, ue: &NodeId) -> Option<&SliceConfig> {
        self.slices.iter().find(|s| &s.assigned_ue == ue)
    }

    fn key(&self) -> (NodeId, NodeId) {
        ordered(&self.a, &self.b)
    }
}

fn ordered(a: &NodeId, b: &NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Fate of one frame handed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Dropped(DropReason),
    Arrives { at: SimTime, duplicate_at: Option<SimTime> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Loss,
    Partition,
}

/// Topology plus the random stream that drives it.
pub struct Network {
    nodes: BTreeMap<NodeId, NodeSpec>,
    links: BTreeMap<(NodeId, NodeId), LinkState>,
    rng: ChaCha8Rng,
    trace: Option<Trace>,
}

struct LinkState {
    spec: LinkSpec,
    connected: bool,
}

impl Network {
    pub fn new(seed: u64) -> Self {
        Network { nodes: BTreeMap::new(), links: BTreeMap::new(), rng: ChaCha8Rng::seed_from_u64(seed), trace: None }
    }

    pub fn from_specs(nodes: &[NodeSpec], links: &[LinkSpec], seed: u64) -> Result<Self, NetError> {
        let mut net = Network::new(seed);
        for n in nodes {
            net.add_node(n.clone());
        }
        for l in links {
            net.add_link(l.clone())?;
        }
        Ok(net)
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Trace::default());
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.trace.as_ref()
    }

    pub fn record(&mut self, rec: TraceRecord) {
        if let Some(t) = self.trace.as_mut() {
            t.push(rec);
        }
    }

    pub fn add_node(&mut self, spec: NodeSpec) {
        self.nodes.insert(spec.name.clone(), spec);
    }

    pub fn add_link(&mut self, spec: LinkSpec) -> Result<(), NetError> {
        spec.validate()?;
        for n in [&spec.a, &spec.b] {
            if !self.nodes.contains_key(n) {
                return Err(NetError::UnknownNode(n.clone()));
            }
        }
        self.links.insert(spec.key(), LinkState { spec, connected: false });
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> BTreeSet<NodeId> {
        self.nodes.keys().cloned().collect()
    }

    pub fn has_node(&self, n: &NodeId) -> bool {
        self.nodes.contains_key(n)
    }

    pub fn link(&self, a: &NodeId, b: &NodeId) -> Option<&LinkSpec> {
        self.links.get(&ordered(a, b)).map(|l| &l.spec)
    }

    pub fn link_mut(&mut self, a: &NodeId, b: &NodeId) -> Option<&mut LinkSpec> {
        self.links.get_mut(&ordered(a, b)).map(|l| &mut l.spec)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn ue_efficiency(&self, n: &NodeId) -> f64 {
        self.nodes.get(n).map(|s| s.ue_efficiency).unwrap_or(1.0)
    }

    /// Hands a frame of `len` bytes from `from` to `to` at `now`.
    pub fn deliver(&mut self, from: &NodeId, to: &NodeId, len: usize, now: SimTime) -> Result<Delivery, NetError> {
        let key = ordered(from, to);
        let eff = {
            let ue = if self.links.get(&key).and_then(|l| l.spec.slice_for(from)).is_some() { from } else { to };
            self.ue_efficiency(ue)
        };
        let state = self.links.get_mut(&key).ok_or_else(|| NetError::RouteUnreachable(from.clone(), to.clone()))?;
        let spec = &state.spec;
        let outcome = if spec.partitioned_at(now) {
            Delivery::Dropped(DropReason::Partition)
        } else if spec.loss_prob > 0.0 && self.rng.gen::<f64>() < spec.loss_prob {
            Delivery::Dropped(DropReason::Loss)
        } else {
            let slice = spec.slice_for(from).or_else(|| spec.slice_for(to)).cloned();
            let mut first = sample_transit(spec, slice.as_ref(), eff, len, &mut self.rng);
            if !state.connected {
                first = first + SimDuration::from_millis_f64(spec.connect_penalty_ms);
                state.connected = true;
            }
            let dup = if spec.dup_prob > 0.0 && self.rng.gen::<f64>() < spec.dup_prob {
                Some(now + sample_transit(&state.spec, slice.as_ref(), eff, len, &mut self.rng))
            } else {
                None
            };
            Delivery::Arrives { at: now + first, duplicate_at: dup }
        };
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRecord::send(now, from, to, len, &outcome));
        }
        Ok(outcome)
    }

    /// iperf-style throughput trial for a UE on its slice of a sliced link.
    pub fn run_throughput_trial(
        &mut self,
        ue: &NodeId,
        duration: SimDuration,
        samples: usize,
        start: SimTime,
    ) -> Result<Vec<TransferRecord>, NetError> {
        let (link, slice) = self
            .links
            .values()
            .find_map(|l| l.spec.slice_for(ue).map(|s| (l.spec.clone(), s.clone())))
            .ok_or_else(|| NetError::RouteUnreachable(ue.clone(), NodeId::new("gnb")))?;
        let eff = self.ue_efficiency(ue);
        slicing::throughput_samples(
            link.base_capacity_mbps,
            &slice,
            eff,
            &link.throughput_noise,
            start,
            duration,
            samples,
            &mut self.rng,
        )
    }
}

/// Latency plus serialization delay for one frame.
fn sample_transit(spec: &LinkSpec, slice: Option<&SliceConfig>, eff: f64, len: usize, rng: &mut ChaCha8Rng) -> SimDuration {
    let lat = sample_latency_ms(spec.latency_mean_ms, spec.latency_sd_ms, rng);
    let mbps = match slice {
        Some(s) => spec.throughput_noise.sample(slicing::mean_capacity(spec.base_capacity_mbps, s, eff), rng),
        None => spec.base_capacity_mbps,
    };
    let ser_ms = if mbps > 0.0 { len as f64 * 8.0 / (mbps * 1e6) * 1e3 } else { 0.0 };
    SimDuration::from_millis_f64(lat + ser_ms)
}

/// Normal latency truncated below at [`MIN_LATENCY_MS`] by rejection.
pub fn sample_latency_ms<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    if sd <= 0.0 {
        return mean.max(MIN_LATENCY_MS);
    }
    let d = Normal::new(mean, sd).unwrap();
    for _ in 0..64 {
        let x = d.sample(rng);
        if x >= MIN_LATENCY_MS {
            return x;
        }
    }
    MIN_LATENCY_MS
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(latency: f64, sd: f64) -> Network {
        let nodes = [
            NodeSpec { name: "a".into(), ue_efficiency: 1.0 },
            NodeSpec { name: "b".into(), ue_efficiency: 1.0 },
        ];
        Network::from_specs(&nodes, &[LinkSpec::new("a", "b", latency, sd)], 7).unwrap()
    }

    #[test]
    fn tiny_frame_arrives_after_latency() {
        let mut net = pair(17.0, 0.8);
        let mut total = 0.0;
        for i in 0..2000 {
            let now = SimTime(i * 1_000_000);
            match net.deliver(&"a".into(), &"b".into(), 16, now).unwrap() {
                Delivery::Arrives { at, duplicate_at: None } => total += (at - now).as_millis_f64(),
                other => panic!("{other:?}"),
            }
        }
        assert!((total / 2000.0 - 17.0).abs() < 0.1);
    }

    #[test]
    fn partition_drops() {
        let mut net = pair(10.0, 0.0);
        net.link_mut(&"a".into(), &"b".into()).unwrap().partitions.push([1.0, 2.0]);
        let d = net.deliver(&"a".into(), &"b".into(), 8, SimTime::from_secs_f64(1.5)).unwrap();
        assert_eq!(d, Delivery::Dropped(DropReason::Partition));
        let d = net.deliver(&"a".into(), &"b".into(), 8, SimTime::from_secs_f64(2.0)).unwrap();
        assert!(matches!(d, Delivery::Arrives { .. }));
    }

    #[test]
    fn serialization_delay_on_half_slice() {
        // 5 MB over half of a 48 Mbps cell: 5e6 * 8 / 24e6 s
        let nodes = [
            NodeSpec { name: "ue".into(), ue_efficiency: 1.0 },
            NodeSpec { name: "gnb".into(), ue_efficiency: 1.0 },
        ];
        let mut link = LinkSpec::new("ue", "gnb", 0.0, 0.0);
        link.base_capacity_mbps = 48.0;
        link.slices.push(SliceConfig { slice_id: 5, prb_fraction: 0.5, assigned_ue: "ue".into() });
        let mut net = Network::from_specs(&nodes, &[link], 1).unwrap();
        let Delivery::Arrives { at, .. } = net.deliver(&"ue".into(), &"gnb".into(), 5_000_000, SimTime::ZERO).unwrap() else {
            panic!()
        };
        let expected = 5e6 * 8.0 / (0.5 * 48e6) + MIN_LATENCY_MS / 1e3;
        assert!((at.as_secs_f64() - expected).abs() < 1e-5, "{}", at.as_secs_f64());
    }

    #[test]
    fn connect_penalty_applies_once() {
        let mut net = pair(10.0, 0.0);
        net.link_mut(&"a".into(), &"b".into()).unwrap().connect_penalty_ms = 100.0;
        let t = |d| match d {
            Delivery::Arrives { at, .. } => at,
            _ => panic!(),
        };
        let first = t(net.deliver(&"a".into(), &"b".into(), 0, SimTime::ZERO).unwrap());
        let second = t(net.deliver(&"b".into(), &"a".into(), 0, SimTime::ZERO).unwrap());
        assert_eq!(first, SimTime(110_000));
        assert_eq!(second, SimTime(10_000));
    }

    #[test]
    fn oversubscribed_slices_rejected() {
        let mut link = LinkSpec::new("a", "b", 1.0, 0.0);
        link.slices.push(SliceConfig { slice_id: 1, prb_fraction: 0.7, assigned_ue: "a".into() });
        link.slices.push(SliceConfig { slice_id: 2, prb_fraction: 0.4, assigned_ue: "b".into() });
        assert!(matches!(link.validate(), Err(NetError::InvalidLink(_))));
    }

    #[test]
    fn unknown_route() {
        let mut net = pair(1.0, 0.0);
        net.add_node(NodeSpec { name: "c".into(), ue_efficiency: 1.0 });
        assert!(matches!(
            net.deliver(&"a".into(), &"c".into(), 1, SimTime::ZERO),
            Err(NetError::RouteUnreachable(..))
        ));
    }
}
