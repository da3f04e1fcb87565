//! Client side of remote append, written as a state machine that emits
//! actions (send a frame, arm a timer, finish) so the same logic runs inside
//! the simulator or over a socket.

use super::frame::{Frame, Status};
use super::TransportError;
use crate::ids::{MessageId, NodeId};
use crate::time::{SimDuration, SimTime};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    /// How long to wait for a reply before treating the attempt as lost.
    #[serde(default = "default_timeout_ms")]
    pub reply_timeout_ms: f64,
    #[serde(default = "default_base_ms")]
    pub backoff_base_ms: f64,
    #[serde(default = "default_cap_ms")]
    pub backoff_cap_ms: f64,
    /// Total request transmissions before giving up; `None` retries forever.
    #[serde(default)]
    pub max_attempts: Option<u32>,
}

fn default_timeout_ms() -> f64 {
    1000.0
}
fn default_base_ms() -> f64 {
    100.0
}
fn default_cap_ms() -> f64 {
    5000.0
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            reply_timeout_ms: default_timeout_ms(),
            backoff_base_ms: default_base_ms(),
            backoff_cap_ms: default_cap_ms(),
            max_attempts: None,
        }
    }
}

impl RetryPolicy {
    pub fn bounded(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts: Some(max_attempts), ..Self::default() }
    }

    /// Wait after the `failures`-th consecutive lost attempt (1-based).
    pub fn backoff(&self, failures: u32) -> SimDuration {
        let exp = self.backoff_base_ms * 2f64.powi(failures.saturating_sub(1).min(30) as i32);
        SimDuration::from_millis_f64(exp.min(self.backoff_cap_ms))
    }
}

pub type OpId = u64;

#[derive(Debug, Clone, PartialEq)]
pub enum ClientAction {
    Send { op: OpId, to: NodeId, frame: Frame },
    Timer { op: OpId, token: u64, at: SimTime },
    Done(Completion),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub op: OpId,
    pub result: Result<u64, TransportError>,
    pub started: SimTime,
    pub finished: SimTime,
    /// Request frames transmitted, retries included.
    pub requests_sent: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Size,
    Append { element_size: u32 },
}

#[derive(Debug, Clone)]
struct AppendOp {
    target: NodeId,
    log_name: String,
    payload: Vec<u8>,
    message_id: MessageId,
    phase: Phase,
    started: SimTime,
    sent: u32,
    failures: u32,
    token: u64,
    awaiting_reply: bool,
    from_cache: bool,
}

/// Per-node transport client: in-flight appends plus the optional
/// element-size cache.
#[derive(Debug, Default)]
pub struct TransportClient {
    policy: RetryPolicy,
    cache_enabled: bool,
    cache: HashMap<(NodeId, String), (u32, SimTime)>,
    ops: BTreeMap<OpId, AppendOp>,
    by_message: HashMap<MessageId, OpId>,
    next_op: OpId,
    next_token: u64,
}

impl TransportClient {
    pub fn new(policy: RetryPolicy, cache_enabled: bool) -> Self {
        TransportClient { policy, cache_enabled, next_op: 1, ..Default::default() }
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    pub fn set_cache_enabled(&mut self, on: bool) {
        self.cache_enabled = on;
        if !on {
            self.cache.clear();
        }
    }

    pub fn cached_size(&self, target: &NodeId, log: &str) -> Option<u32> {
        self.cache.get(&(target.clone(), log.to_string())).map(|(s, _)| *s)
    }

    pub fn in_flight(&self) -> usize {
        self.ops.len()
    }

    /// Forgets every in-flight operation (the node crashed).
    pub fn reset(&mut self) {
        self.ops.clear();
        self.by_message.clear();
    }

    pub fn begin(
        &mut self,
        target: NodeId,
        log_name: &str,
        payload: Vec<u8>,
        message_id: MessageId,
        now: SimTime,
    ) -> (OpId, Vec<ClientAction>) {
        let op = self.next_op;
        self.next_op += 1;
        let cached = if self.cache_enabled { self.cached_size(&target, log_name) } else { None };
        let phase = match cached {
            Some(element_size) => Phase::Append { element_size },
            None => Phase::Size,
        };
        self.ops.insert(
            op,
            AppendOp {
                target,
                log_name: log_name.to_string(),
                payload,
                message_id,
                phase,
                started: now,
                sent: 0,
                failures: 0,
                token: 0,
                awaiting_reply: false,
                from_cache: cached.is_some(),
            },
        );
        self.by_message.insert(message_id, op);
        if let Some(es) = cached {
            if let Some(done) = self.check_fits(op, es, now) {
                return (op, vec![done]);
            }
        }
        (op, self.transmit(op, now))
    }

    fn check_fits(&mut self, op: OpId, element_size: u32, now: SimTime) -> Option<ClientAction> {
        let len = self.ops[&op].payload.len();
        (len > element_size as usize).then(|| self.finish(op, Err(TransportError::PayloadTooLarge), now))
    }

    fn request_frame(&self, op: OpId) -> Frame {
        let o = &self.ops[&op];
        match o.phase {
            Phase::Size => Frame::SizeRequest { request_id: op, log_name: o.log_name.clone() },
            Phase::Append { element_size } => Frame::AppendRequest {
                message_id: o.message_id,
                element_size,
                log_name: o.log_name.clone(),
                payload: o.payload.clone(),
            },
        }
    }

    fn transmit(&mut self, op: OpId, now: SimTime) -> Vec<ClientAction> {
        if let Some(max) = self.policy.max_attempts {
            if self.ops[&op].sent >= max {
                return vec![self.finish(op, Err(TransportError::DeliveryAbandoned), now)];
            }
        }
        let frame = self.request_frame(op);
        self.next_token += 1;
        let token = self.next_token;
        let timeout = SimDuration::from_millis_f64(self.policy.reply_timeout_ms);
        let o = self.ops.get_mut(&op).unwrap();
        o.sent += 1;
        o.token = token;
        o.awaiting_reply = true;
        vec![
            ClientAction::Send { op, to: o.target.clone(), frame },
            ClientAction::Timer { op, token, at: now + timeout },
        ]
    }

    fn finish(&mut self, op: OpId, result: Result<u64, TransportError>, now: SimTime) -> ClientAction {
        let o = self.ops.remove(&op).expect("live op");
        self.by_message.remove(&o.message_id);
        ClientAction::Done(Completion { op, result, started: o.started, finished: now, requests_sent: o.sent })
    }

    /// Ends an operation early, e.g. when the transport has no route.
    pub fn abort(&mut self, op: OpId, err: TransportError, now: SimTime) -> Option<ClientAction> {
        self.ops.contains_key(&op).then(|| self.finish(op, Err(err), now))
    }

    /// Reply timeout or backoff expiry.
    pub fn on_timer(&mut self, op: OpId, token: u64, now: SimTime) -> Vec<ClientAction> {
        let Some(o) = self.ops.get_mut(&op) else { return Vec::new() };
        if o.token != token {
            return Vec::new();
        }
        if o.awaiting_reply {
            o.failures += 1;
            o.awaiting_reply = false;
            self.next_token += 1;
            o.token = self.next_token;
            let at = now + self.policy.backoff(o.failures);
            vec![ClientAction::Timer { op, token: o.token, at }]
        } else {
            self.transmit(op, now)
        }
    }

    pub fn on_reply(&mut self, frame: &Frame, now: SimTime) -> Vec<ClientAction> {
        match frame {
            Frame::SizeReply { request_id, status, element_size } => {
                let op = *request_id;
                let Some(o) = self.ops.get(&op) else { return Vec::new() };
                if o.phase != Phase::Size {
                    return Vec::new();
                }
                if *status != Status::Ok {
                    return vec![self.finish(op, Err(TransportError::from_status(*status)), now)];
                }
                let key = (o.target.clone(), o.log_name.clone());
                if self.cache_enabled {
                    self.cache.insert(key, (*element_size, now));
                }
                let o = self.ops.get_mut(&op).unwrap();
                o.phase = Phase::Append { element_size: *element_size };
                o.failures = 0;
                if let Some(done) = self.check_fits(op, *element_size, now) {
                    return vec![done];
                }
                self.transmit(op, now)
            }
            Frame::AppendReply { message_id, status, seq } => {
                let Some(&op) = self.by_message.get(message_id) else { return Vec::new() };
                if !matches!(self.ops[&op].phase, Phase::Append { .. }) {
                    return Vec::new();
                }
                let result = match status {
                    Status::Ok if *seq >= 1 => Ok(*seq),
                    Status::Ok => Err(TransportError::Protocol("ok reply with seq 0".into())),
                    Status::SizeMismatch => {
                        let o = &self.ops[&op];
                        if o.from_cache {
                            self.cache.remove(&(o.target.clone(), o.log_name.clone()));
                        }
                        Err(TransportError::SizeMismatch)
                    }
                    s => Err(TransportError::from_status(*s)),
                };
                vec![self.finish(op, result, now)]
            }
            _ => Vec::new(),
        }
    }
}
