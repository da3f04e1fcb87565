//! Remote append: element-size negotiation, retry until a sequence number
//! comes back, optional client-side size caching. Exactly-once delivery
//! follows from stable message ids plus the target log's dedup index.

pub mod client;
pub mod frame;
pub mod server;
pub mod tcp;

pub use client::{ClientAction, Completion, OpId, RetryPolicy, TransportClient};
pub use frame::{Frame, FrameError, Status};
pub use server::{handle_request, Handled};

use crate::fabric::Fabric;
use crate::ids::{MessageId, NodeId};
use crate::time::SimTime;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("unknown log")]
    UnknownLog,
    #[error("payload too large")]
    PayloadTooLarge,
    #[error("element size changed on the server; cached size is stale")]
    SizeMismatch,
    #[error("storage failure on the server")]
    StorageFailure,
    #[error("retry budget exhausted")]
    DeliveryAbandoned,
    #[error("route unreachable: {0}")]
    RouteUnreachable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl TransportError {
    pub fn from_status(s: Status) -> Self {
        match s {
            Status::UnknownLog => TransportError::UnknownLog,
            Status::PayloadTooLarge => TransportError::PayloadTooLarge,
            Status::SizeMismatch => TransportError::SizeMismatch,
            Status::StorageFailure => TransportError::StorageFailure,
            Status::Ok => TransportError::Protocol("ok is not an error".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub sd_ms: f64,
    /// Samples the statistics are computed over (the first is excluded).
    pub n: usize,
    /// Every measured sample in order, including the discarded first one.
    pub samples_ms: Vec<f64>,
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Times `count` back-to-back remote appends of `payload_size` bytes along
/// `route`, store-and-forward: each hop is a full remote append into the
/// log `log` on the next node, which must already exist there. A sample
/// runs from the first request until the last hop returns its sequence
/// number. The first sample pays connection start-up and is excluded from
/// the statistics.
pub fn measure_latency(
    fabric: &mut Fabric,
    route: &[NodeId],
    log: &str,
    payload_size: usize,
    count: usize,
) -> Result<LatencyStats, TransportError> {
    if count < 2 {
        return Err(TransportError::Protocol("need at least two samples".into()));
    }
    if route.len() < 2 {
        return Err(TransportError::RouteUnreachable("route needs two endpoints".into()));
    }
    for hop in route.windows(2) {
        if fabric.network().link(&hop[0], &hop[1]).is_none() {
            return Err(TransportError::RouteUnreachable(format!("{} -> {}", hop[0], hop[1])));
        }
    }
    let limit = SimTime(u64::MAX / 2);
    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let sent = fabric.now();
        for (h, hop) in route.windows(2).enumerate() {
            let id = MessageId::derive(&[b"latency", log.as_bytes(), &(k as u64).to_le_bytes(), &(h as u64).to_le_bytes()]);
            let op = fabric
                .remote_append(&hop[0], &hop[1], log, vec![0xA5; payload_size], id)
                .map_err(|e| TransportError::Protocol(e.to_string()))?;
            let from = hop[0].clone();
            fabric.run_while(limit, |f| f.completion(&from, op).is_none());
            let done = fabric.take_completion(&hop[0], op).ok_or(TransportError::DeliveryAbandoned)?;
            done.result?;
        }
        samples.push((fabric.now() - sent).as_millis_f64());
    }
    let (mean_ms, sd_ms) = mean_sd(&samples[1..]);
    Ok(LatencyStats { mean_ms, sd_ms, n: count - 1, samples_ms: samples })
}
