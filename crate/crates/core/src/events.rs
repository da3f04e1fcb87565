//! Handlers: functions bound to a log and fired once per appended entry.
//!
//! A handler sees exactly one triggering entry plus read access to the
//! node's logs, and expresses every effect as an append. There is no way to
//! wait for another handler; multi-event synchronization is done by
//! scanning logs. Effect message ids are derived from
//! `(handler_id, source log, trigger seq, effect index)`, so re-firing a
//! handler after a crash reproduces the same ids and the target logs'
//! dedup absorbs the repeats.

use crate::ids::{MessageId, NodeId};
use crate::logstore::{LogEntry, LogHandle, LogStore};
use crate::time::SimTime;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Name of the per-node log holding binding progress cursors.
pub const CURSOR_LOG: &str = "sys.cursors";
/// Name of the per-node log recording failed invocations.
pub const FAILURE_LOG: &str = "sys.failures";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EffectTarget {
    Local(String),
    Remote { node: NodeId, log: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppendEffect {
    pub target: EffectTarget,
    pub payload: Vec<u8>,
    /// Explicit id; when `None` the engine derives one from the trigger.
    pub message_id: Option<MessageId>,
}

impl AppendEffect {
    pub fn local(log: impl Into<String>, payload: Vec<u8>) -> Self {
        AppendEffect { target: EffectTarget::Local(log.into()), payload, message_id: None }
    }

    pub fn remote(node: NodeId, log: impl Into<String>, payload: Vec<u8>) -> Self {
        AppendEffect { target: EffectTarget::Remote { node, log: log.into() }, payload, message_id: None }
    }

    pub fn with_id(mut self, id: MessageId) -> Self {
        self.message_id = Some(id);
        self
    }
}

/// What a handler may see while it runs.
pub struct HandlerContext<'a> {
    pub node: &'a NodeId,
    pub trigger_log: &'a str,
    pub now: SimTime,
    store: &'a LogStore,
}

impl<'a> HandlerContext<'a> {
    pub fn new(node: &'a NodeId, trigger_log: &'a str, now: SimTime, store: &'a LogStore) -> Self {
        HandlerContext { node, trigger_log, now, store }
    }

    pub fn log(&self, name: &str) -> Option<LogHandle> {
        self.store.get(name)
    }
}

pub type HandlerResult = Result<Vec<AppendEffect>, String>;
pub type HandlerFn = Arc<dyn Fn(&LogEntry, &HandlerContext<'_>) -> HandlerResult + Send + Sync>;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum HandlerError {
    #[error("unknown handler `{0}`")]
    UnknownHandler(String),
    #[error("unknown log `{0}`")]
    UnknownLog(String),
}

/// Handler id → function, populated at node start-up.
#[derive(Clone, Default)]
pub struct HandlerTable {
    map: BTreeMap<String, HandlerFn>,
}

impl HandlerTable {
    pub fn register<F>(&mut self, id: impl Into<String>, f: F)
    where
        F: Fn(&LogEntry, &HandlerContext<'_>) -> HandlerResult + Send + Sync + 'static,
    {
        self.map.insert(id.into(), Arc::new(f));
    }

    pub fn get(&self, id: &str) -> Option<HandlerFn> {
        self.map.get(id).cloned()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.map.contains_key(id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandlerBinding {
    pub log: String,
    pub handler_id: String,
}

impl HandlerBinding {
    pub fn key(&self) -> String {
        format!("{}@{}", self.handler_id, self.log)
    }
}

/// Outcome of running one handler on one entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Invocation {
    Effects(Vec<AppendEffect>),
    Failed(String),
}

/// Runs `f` on `entry`, converting errors and panics into [`Invocation::Failed`].
pub fn fire(f: &HandlerFn, entry: &LogEntry, ctx: &HandlerContext<'_>) -> Invocation {
    let run = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(entry, ctx)));
    match run {
        Ok(Ok(effects)) => Invocation::Effects(effects),
        Ok(Err(msg)) => Invocation::Failed(msg),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "handler panicked".into());
            Invocation::Failed(format!("panic: {msg}"))
        }
    }
}

/// Id of the `index`th effect of the handler firing on `node`'s `log` at
/// `seq`. Log names are only unique per node, so the node is part of it.
pub fn effect_id(node: &NodeId, handler_id: &str, log: &str, seq: u64, index: usize) -> MessageId {
    MessageId::derive(&[
        b"effect",
        node.as_str().as_bytes(),
        handler_id.as_bytes(),
        log.as_bytes(),
        &seq.to_le_bytes(),
        &(index as u64).to_le_bytes(),
    ])
}

pub fn encode_cursor(binding_key: &str, seq: u64) -> Vec<u8> {
    let mut b = Vec::with_capacity(binding_key.len() + 10);
    b.extend_from_slice(&(binding_key.len() as u16).to_le_bytes());
    b.extend_from_slice(binding_key.as_bytes());
    b.extend_from_slice(&seq.to_le_bytes());
    b
}

pub fn decode_cursor(b: &[u8]) -> Option<(String, u64)> {
    let n = u16::from_le_bytes(b.get(..2)?.try_into().ok()?) as usize;
    let key = std::str::from_utf8(b.get(2..2 + n)?).ok()?.to_string();
    let seq = u64::from_le_bytes(b.get(2 + n..10 + n)?.try_into().ok()?);
    Some((key, seq))
}

pub fn cursor_id(binding_key: &str, seq: u64) -> MessageId {
    MessageId::derive(&[b"cursor", binding_key.as_bytes(), &seq.to_le_bytes()])
}

/// Latest persisted cursor per binding key.
pub fn load_cursors(store: &LogStore) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    if let Some(log) = store.get(CURSOR_LOG) {
        if let Ok(scan) = log.scan(log.earliest_seq(), log.last_seq()) {
            for e in scan.entries {
                if let Some((k, s)) = decode_cursor(&e.payload) {
                    let slot = out.entry(k).or_insert(0);
                    *slot = (*slot).max(s);
                }
            }
        }
    }
    out
}
