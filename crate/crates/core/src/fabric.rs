//! The simulated fabric: nodes with their logs and handlers, joined by the
//! simulated network, all driven by one deterministic event queue.

use crate::events::{
    self, cursor_id, effect_id, encode_cursor, AppendEffect, EffectTarget, HandlerBinding, HandlerContext,
    HandlerError, HandlerTable, Invocation, CURSOR_LOG, FAILURE_LOG,
};
use crate::ids::{MessageId, NodeId};
use crate::logstore::{LogEntry, LogError, LogHandle, LogStore};
use crate::netsim::{Delivery, Network, Scheduler, TraceRecord};
use crate::time::{SimDuration, SimTime};
use crate::transport::{handle_request, ClientAction, Completion, Frame, OpId, RetryPolicy, TransportClient, TransportError};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

pub const CURSOR_CAPACITY: u64 = 1 << 16;

type ActionFn = Box<dyn FnOnce(&mut Fabric)>;

/// Something that reacts to appends on specific logs and to its own timers,
/// outside the handler model (the batch facility is one).
pub trait Service {
    /// Called after a fresh append to a watched log.
    fn on_append(&mut self, fabric: &mut Fabric, node: &NodeId, log: &str, entry: &LogEntry);
    fn on_wake(&mut self, fabric: &mut Fabric, token: u64);
    fn as_any(&self) -> &dyn std::any::Any;
}

enum Event {
    Frame { from: NodeId, to: NodeId, bytes: Vec<u8> },
    ClientTimer { node: NodeId, epoch: u64, op: OpId, token: u64 },
    Invoke { node: NodeId, epoch: u64, binding: usize },
    Restart { node: NodeId },
    Wake { service: usize, token: u64 },
    Action(ActionFn),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// Before the n-th invocation on the node starts.
    BeforeInvocation,
    /// After the n-th invocation issued its effects, before its cursor is
    /// persisted.
    AfterEffects,
}

#[derive(Debug, Clone)]
pub struct CrashPlan {
    pub node: NodeId,
    /// 1-based invocation index on that node.
    pub invocation: u64,
    pub point: CrashPoint,
    pub downtime: SimDuration,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FabricStats {
    pub frames_sent: u64,
    pub frames_dropped: u64,
    pub invocations: u64,
    pub failed_invocations: u64,
    pub crashes: u64,
}

enum OpOwner {
    Handler { binding: usize },
    External,
}

struct Active {
    seq: u64,
    outstanding: usize,
}

#[derive(Default)]
struct BindingQueue {
    pending: VecDeque<LogEntry>,
    active: Option<Active>,
    scheduled: bool,
}

pub struct FabricNode {
    pub id: NodeId,
    pub store: Arc<LogStore>,
    handlers: HandlerTable,
    bindings: Vec<HandlerBinding>,
    queues: Vec<BindingQueue>,
    client: TransportClient,
    owners: HashMap<OpId, OpOwner>,
    up: bool,
    epoch: u64,
    invocations: u64,
}

impl FabricNode {
    pub fn bindings(&self) -> &[HandlerBinding] {
        &self.bindings
    }

    pub fn is_up(&self) -> bool {
        self.up
    }
}

pub struct Fabric {
    sched: Scheduler<Event>,
    net: Network,
    nodes: BTreeMap<NodeId, FabricNode>,
    completions: BTreeMap<(NodeId, OpId), Completion>,
    services: Vec<Option<Box<dyn Service>>>,
    watchers: BTreeMap<(NodeId, String), Vec<usize>>,
    crash_plan: Option<CrashPlan>,
    stats: FabricStats,
    policy: RetryPolicy,
}

#[derive(Debug, thiserror::Error)]
pub enum FabricError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Handler(#[from] HandlerError),
}

impl Fabric {
    /// One fabric node per network node, each with an in-memory store.
    pub fn new(net: Network, policy: RetryPolicy) -> Self {
        let mut f = Fabric {
            sched: Scheduler::new(),
            nodes: BTreeMap::new(),
            completions: BTreeMap::new(),
            services: Vec::new(),
            watchers: BTreeMap::new(),
            crash_plan: None,
            stats: FabricStats::default(),
            policy,
            net,
        };
        let ids: Vec<NodeId> = f.net.node_ids().into_iter().collect();
        for id in ids {
            let store = Arc::new(LogStore::in_memory());
            store.create_log(CURSOR_LOG, 128, CURSOR_CAPACITY).expect("fresh store");
            store.create_log(FAILURE_LOG, 256, 4096).expect("fresh store");
            f.nodes.insert(
                id.clone(),
                FabricNode {
                    id,
                    store,
                    handlers: HandlerTable::default(),
                    bindings: Vec::new(),
                    queues: Vec::new(),
                    client: TransportClient::new(policy, false),
                    owners: HashMap::new(),
                    up: true,
                    epoch: 0,
                    invocations: 0,
                },
            );
        }
        f
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn stats(&self) -> &FabricStats {
        &self.stats
    }

    pub fn policy(&self) -> RetryPolicy {
        self.policy
    }

    pub fn node(&self, id: &NodeId) -> Result<&FabricNode, FabricError> {
        self.nodes.get(id).ok_or_else(|| FabricError::UnknownNode(id.clone()))
    }

    fn node_mut(&mut self, id: &NodeId) -> Result<&mut FabricNode, FabricError> {
        self.nodes.get_mut(id).ok_or_else(|| FabricError::UnknownNode(id.clone()))
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().cloned().collect()
    }

    pub fn store(&self, id: &NodeId) -> Result<Arc<LogStore>, FabricError> {
        Ok(self.node(id)?.store.clone())
    }

    pub fn log(&self, node: &NodeId, log: &str) -> Result<LogHandle, FabricError> {
        Ok(self.node(node)?.store.require(log)?)
    }

    pub fn create_log(&mut self, node: &NodeId, name: &str, element_size: u32, capacity: u64) -> Result<LogHandle, FabricError> {
        Ok(self.node(node)?.store.create_log(name, element_size, capacity)?)
    }

    pub fn set_size_cache(&mut self, node: &NodeId, enabled: bool) -> Result<(), FabricError> {
        self.node_mut(node)?.client.set_cache_enabled(enabled);
        Ok(())
    }

    pub fn register_handler<F>(&mut self, node: &NodeId, id: &str, f: F) -> Result<(), FabricError>
    where
        F: Fn(&LogEntry, &HandlerContext<'_>) -> events::HandlerResult + Send + Sync + 'static,
    {
        self.node_mut(node)?.handlers.register(id, f);
        Ok(())
    }

    /// Binds a registered handler to a local log; later appends fire it
    /// once per entry, in sequence order.
    pub fn bind(&mut self, node: &NodeId, log: &str, handler_id: &str) -> Result<HandlerBinding, FabricError> {
        let n = self.node_mut(node)?;
        if !n.handlers.contains(handler_id) {
            return Err(HandlerError::UnknownHandler(handler_id.to_string()).into());
        }
        if n.store.get(log).is_none() {
            return Err(HandlerError::UnknownLog(log.to_string()).into());
        }
        let b = HandlerBinding { log: log.to_string(), handler_id: handler_id.to_string() };
        n.bindings.push(b.clone());
        n.queues.push(BindingQueue::default());
        Ok(b)
    }

    /// Index the next [`Fabric::add_service`] call will return.
    pub fn next_service_id(&self) -> usize {
        self.services.len()
    }

    pub fn add_service(&mut self, svc: Box<dyn Service>) -> usize {
        self.services.push(Some(svc));
        self.services.len() - 1
    }

    pub fn watch(&mut self, service: usize, node: &NodeId, log: &str) {
        self.watchers.entry((node.clone(), log.to_string())).or_default().push(service);
    }

    pub fn service<T: 'static>(&self, idx: usize) -> Option<&T> {
        self.services.get(idx)?.as_ref()?.as_any().downcast_ref::<T>()
    }

    pub fn wake_at(&mut self, service: usize, token: u64, at: SimTime) {
        self.sched.schedule(at, Event::Wake { service, token });
    }

    pub fn schedule<F: FnOnce(&mut Fabric) + 'static>(&mut self, at: SimTime, f: F) {
        self.sched.schedule(at, Event::Action(Box::new(f)));
    }

    pub fn set_crash_plan(&mut self, plan: Option<CrashPlan>) {
        self.crash_plan = plan;
    }

    pub fn note(&mut self, node: &NodeId, kind: &str, detail: String) {
        let now = self.now();
        self.net.record(TraceRecord::note(now, kind, node, detail));
    }

    /// Appends on behalf of a local writer (a sensor, an operator) and fires
    /// bound handlers.
    pub fn append_local(&mut self, node: &NodeId, log: &str, payload: &[u8], id: MessageId) -> Result<u64, FabricError> {
        let now = self.now();
        let handle = self.log(node, log)?;
        let o = handle.append(payload, id, now)?;
        if !o.duplicate {
            let entry = handle.read(o.seq)?;
            self.on_fresh_append(node, log, entry);
        }
        Ok(o.seq)
    }

    /// Starts an append to a log on another node; the result shows up in
    /// [`Fabric::completion`] once the simulation has run far enough.
    pub fn remote_append(&mut self, from: &NodeId, to: &NodeId, log: &str, payload: Vec<u8>, id: MessageId) -> Result<OpId, FabricError> {
        let now = self.now();
        let n = self.node_mut(from)?;
        let (op, actions) = n.client.begin(to.clone(), log, payload, id, now);
        n.owners.insert(op, OpOwner::External);
        self.process_actions(from, actions);
        Ok(op)
    }

    pub fn completion(&self, node: &NodeId, op: OpId) -> Option<&Completion> {
        self.completions.get(&(node.clone(), op))
    }

    pub fn take_completion(&mut self, node: &NodeId, op: OpId) -> Option<Completion> {
        self.completions.remove(&(node.clone(), op))
    }

    pub fn pending_events(&self) -> usize {
        self.sched.len()
    }

    /// Runs every event due by `until`.
    pub fn run_until(&mut self, until: SimTime) {
        while let Some((_, ev)) = self.sched.pop_until(until) {
            self.dispatch(ev);
        }
        self.sched.set_now(until);
    }

    /// Runs until the queue drains or `limit` is reached; returns whether
    /// the queue drained.
    pub fn run_until_idle(&mut self, limit: SimTime) -> bool {
        while let Some((_, ev)) = self.sched.pop_until(limit) {
            self.dispatch(ev);
        }
        self.sched.is_empty()
    }

    /// Runs until `done` holds or the clock passes `limit`.
    pub fn run_while<P: FnMut(&Fabric) -> bool>(&mut self, limit: SimTime, mut keep_going: P) {
        while keep_going(self) {
            match self.sched.pop_until(limit) {
                Some((_, ev)) => self.dispatch(ev),
                None => break,
            }
        }
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::Frame { from, to, bytes } => self.on_frame(from, to, bytes),
            Event::ClientTimer { node, epoch, op, token } => {
                let now = self.now();
                let Some(n) = self.nodes.get_mut(&node) else { return };
                if !n.up || n.epoch != epoch {
                    return;
                }
                let actions = n.client.on_timer(op, token, now);
                self.process_actions(&node, actions);
            }
            Event::Invoke { node, epoch, binding } => self.invoke(&node, epoch, binding),
            Event::Restart { node } => self.restart(&node),
            Event::Wake { service, token } => {
                if let Some(mut svc) = self.services.get_mut(service).and_then(Option::take) {
                    svc.on_wake(self, token);
                    self.services[service] = Some(svc);
                }
            }
            Event::Action(f) => f(self),
        }
    }

    fn send(&mut self, from: &NodeId, to: &NodeId, frame: &Frame) -> Result<(), TransportError> {
        let bytes = frame.encode();
        let now = self.now();
        match self.net.deliver(from, to, bytes.len(), now) {
            Ok(Delivery::Arrives { at, duplicate_at }) => {
                self.stats.frames_sent += 1;
                if let Some(d) = duplicate_at {
                    self.sched.schedule(d, Event::Frame { from: from.clone(), to: to.clone(), bytes: bytes.clone() });
                }
                self.sched.schedule(at, Event::Frame { from: from.clone(), to: to.clone(), bytes });
                Ok(())
            }
            Ok(Delivery::Dropped(_)) => {
                self.stats.frames_sent += 1;
                self.stats.frames_dropped += 1;
                Ok(())
            }
            Err(e) => Err(TransportError::RouteUnreachable(e.to_string())),
        }
    }

    fn on_frame(&mut self, from: NodeId, to: NodeId, bytes: Vec<u8>) {
        let now = self.now();
        let Some(n) = self.nodes.get(&to) else { return };
        if !n.up {
            self.stats.frames_dropped += 1;
            return;
        }
        let Ok(frame) = Frame::decode(&bytes) else { return };
        match frame {
            Frame::SizeRequest { .. } | Frame::AppendRequest { .. } => {
                let store = n.store.clone();
                let Some(h) = handle_request(&store, &frame, now) else { return };
                // a reply that cannot be routed is simply lost; the client retries
                let _ = self.send(&to, &from, &h.reply);
                if let Some((log, entry)) = h.appended {
                    self.on_fresh_append(&to, &log, entry);
                }
            }
            Frame::SizeReply { .. } | Frame::AppendReply { .. } => {
                let actions = self.nodes.get_mut(&to).unwrap().client.on_reply(&frame, now);
                self.process_actions(&to, actions);
            }
        }
    }

    fn process_actions(&mut self, node: &NodeId, actions: Vec<ClientAction>) {
        let epoch = self.nodes[node].epoch;
        let mut queue: VecDeque<ClientAction> = actions.into();
        while let Some(a) = queue.pop_front() {
            match a {
                ClientAction::Send { op, to, frame } => {
                    if let Err(e) = self.send(node, &to, &frame) {
                        // no link at all: retrying cannot help
                        let now = self.now();
                        queue.retain(|a| !matches!(a, ClientAction::Timer { op: o, .. } if *o == op));
                        let n = self.nodes.get_mut(node).unwrap();
                        if let Some(done) = n.client.abort(op, e, now) {
                            queue.push_back(done);
                        }
                    }
                }
                ClientAction::Timer { op, token, at } => {
                    self.sched.schedule(at, Event::ClientTimer { node: node.clone(), epoch, op, token });
                }
                ClientAction::Done(c) => self.on_completion(node, c),
            }
        }
    }

    fn on_completion(&mut self, node: &NodeId, c: Completion) {
        let n = self.nodes.get_mut(node).unwrap();
        match n.owners.remove(&c.op) {
            Some(OpOwner::Handler { binding }) => {
                if let Err(e) = &c.result {
                    let msg = format!("remote effect failed: {e}");
                    self.record_failure(node, binding, &msg);
                }
                let n = self.nodes.get_mut(node).unwrap();
                if let Some(a) = n.queues[binding].active.as_mut() {
                    a.outstanding -= 1;
                    if a.outstanding == 0 {
                        self.complete_invocation(node, binding);
                    }
                }
            }
            Some(OpOwner::External) | None => {
                self.completions.insert((node.clone(), c.op), c);
            }
        }
    }

    fn on_fresh_append(&mut self, node: &NodeId, log: &str, entry: LogEntry) {
        let now = self.now();
        let n = self.nodes.get_mut(node).unwrap();
        let epoch = n.epoch;
        // a down node picks new entries up from its cursors on restart
        let bindings = if n.up { n.bindings.len() } else { 0 };
        for (i, b) in n.bindings.iter().enumerate().take(bindings) {
            if b.log != log {
                continue;
            }
            let q = &mut n.queues[i];
            q.pending.push_back(entry.clone());
            if q.active.is_none() && !q.scheduled {
                q.scheduled = true;
                self.sched.schedule(now, Event::Invoke { node: node.clone(), epoch, binding: i });
            }
        }
        if let Some(svcs) = self.watchers.get(&(node.clone(), log.to_string())).cloned() {
            for s in svcs {
                if let Some(mut svc) = self.services.get_mut(s).and_then(Option::take) {
                    svc.on_append(self, node, log, &entry);
                    self.services[s] = Some(svc);
                }
            }
        }
    }

    fn crash_due(&self, node: &NodeId, count: u64, point: CrashPoint) -> bool {
        matches!(&self.crash_plan, Some(p) if &p.node == node && p.invocation == count && p.point == point)
    }

    fn invoke(&mut self, node: &NodeId, epoch: u64, binding: usize) {
        let now = self.now();
        let n = self.nodes.get_mut(node).unwrap();
        if !n.up || n.epoch != epoch {
            return;
        }
        let q = &mut n.queues[binding];
        q.scheduled = false;
        if q.active.is_some() {
            return;
        }
        let Some(entry) = q.pending.pop_front() else { return };
        n.invocations += 1;
        let count = n.invocations;
        if self.crash_due(node, count, CrashPoint::BeforeInvocation) {
            self.crash(node);
            return;
        }
        let n = self.nodes.get_mut(node).unwrap();
        // one extra count holds the invocation open while effects are issued
        n.queues[binding].active = Some(Active { seq: entry.seq, outstanding: 1 });
        let b = n.bindings[binding].clone();
        let f = n.handlers.get(&b.handler_id).expect("bound handler is registered");
        let store = n.store.clone();
        self.stats.invocations += 1;
        let outcome = {
            let ctx = HandlerContext::new(node, &b.log, now, &store);
            events::fire(&f, &entry, &ctx)
        };
        let effects = match outcome {
            Invocation::Effects(e) => e,
            Invocation::Failed(msg) => {
                self.stats.failed_invocations += 1;
                self.record_failure(node, binding, &msg);
                Vec::new()
            }
        };
        for (i, eff) in effects.into_iter().enumerate() {
            let id = eff.message_id.unwrap_or_else(|| effect_id(node, &b.handler_id, &b.log, entry.seq, i));
            match eff.target {
                EffectTarget::Local(log) => {
                    if let Err(e) = self.append_local(node, &log, &eff.payload, id) {
                        self.record_failure(node, binding, &format!("local effect on {log}: {e}"));
                    }
                }
                EffectTarget::Remote { node: target, log } if &target == node => {
                    if let Err(e) = self.append_local(node, &log, &eff.payload, id) {
                        self.record_failure(node, binding, &format!("local effect on {log}: {e}"));
                    }
                }
                EffectTarget::Remote { node: target, log } => {
                    let n = self.nodes.get_mut(node).unwrap();
                    let (op, actions) = n.client.begin(target, &log, eff.payload, id, now);
                    n.owners.insert(op, OpOwner::Handler { binding });
                    if let Some(a) = n.queues[binding].active.as_mut() {
                        a.outstanding += 1;
                    }
                    self.process_actions(node, actions);
                }
            }
        }
        if self.crash_due(node, count, CrashPoint::AfterEffects) {
            self.crash(node);
            return;
        }
        let n = self.nodes.get_mut(node).unwrap();
        if let Some(a) = n.queues[binding].active.as_mut() {
            a.outstanding -= 1;
            if a.outstanding == 0 {
                self.complete_invocation(node, binding);
            }
        }
    }

    fn complete_invocation(&mut self, node: &NodeId, binding: usize) {
        let now = self.now();
        let n = self.nodes.get_mut(node).unwrap();
        let Some(active) = n.queues[binding].active.take() else { return };
        let key = n.bindings[binding].key();
        let cursor = n.store.get(CURSOR_LOG).expect("cursor log");
        // cursor appends never fail short of storage loss
        let _ = cursor.append(&encode_cursor(&key, active.seq), cursor_id(&key, active.seq), now);
        if !n.queues[binding].pending.is_empty() && !n.queues[binding].scheduled {
            n.queues[binding].scheduled = true;
            let epoch = n.epoch;
            self.sched.schedule(now, Event::Invoke { node: node.clone(), epoch, binding });
        }
    }

    fn record_failure(&mut self, node: &NodeId, binding: usize, msg: &str) {
        let now = self.now();
        let n = self.nodes.get_mut(node).unwrap();
        let key = n.bindings[binding].key();
        let seq = n.queues[binding].active.as_ref().map(|a| a.seq).unwrap_or(0);
        let mut text = format!("{key}#{seq}: {msg}").into_bytes();
        text.truncate(256);
        let id = MessageId::derive(&[b"failure", &text]);
        if let Some(log) = n.store.get(FAILURE_LOG) {
            let _ = log.append(&text, id, now);
        }
    }

    /// Crashes a node now: volatile state is lost, logs survive.
    pub fn crash(&mut self, node: &NodeId) {
        let downtime = self.crash_plan.as_ref().map(|p| p.downtime).unwrap_or(SimDuration::from_secs(10));
        self.crash_for(node, downtime);
    }

    pub fn crash_for(&mut self, node: &NodeId, downtime: SimDuration) {
        let now = self.now();
        let Some(n) = self.nodes.get_mut(node) else { return };
        if !n.up {
            return;
        }
        n.up = false;
        n.epoch += 1;
        n.client.reset();
        n.owners.clear();
        for q in &mut n.queues {
            *q = BindingQueue::default();
        }
        self.stats.crashes += 1;
        self.note(node, "crash", String::new());
        self.sched.schedule(now + downtime, Event::Restart { node: node.clone() });
    }

    /// Reopens the node's logs from storage and re-fires every binding from
    /// its persisted cursor.
    fn restart(&mut self, node: &NodeId) {
        let now = self.now();
        let n = self.nodes.get_mut(node).unwrap();
        n.up = true;
        n.store.recover_all().expect("simulated storage recovers");
        let cursors = events::load_cursors(&n.store);
        let epoch = n.epoch;
        let mut to_schedule = Vec::new();
        for (i, b) in n.bindings.iter().enumerate() {
            let from = cursors.get(&b.key()).copied().unwrap_or(0) + 1;
            let Some(log) = n.store.get(&b.log) else { continue };
            let Ok(scan) = log.scan(from, log.last_seq()) else { continue };
            let q = &mut n.queues[i];
            q.pending.extend(scan.entries);
            if !q.pending.is_empty() {
                q.scheduled = true;
                to_schedule.push(i);
            }
        }
        for i in to_schedule {
            self.sched.schedule(now, Event::Invoke { node: node.clone(), epoch, binding: i });
        }
        self.note(node, "restart", String::new());
    }

    /// Queues `entry` for another invocation of the binding `handler_id@log`.
    /// Effects are dedup keyed, so re-firing a completed entry is harmless.
    pub fn refire(&mut self, node: &NodeId, log: &str, handler_id: &str, entry: LogEntry) -> Result<(), FabricError> {
        let now = self.now();
        let n = self.node_mut(node)?;
        let i = n
            .bindings
            .iter()
            .position(|b| b.log == log && b.handler_id == handler_id)
            .ok_or_else(|| HandlerError::UnknownHandler(format!("{handler_id}@{log}")))?;
        let epoch = n.epoch;
        let q = &mut n.queues[i];
        q.pending.push_back(entry);
        if q.active.is_none() && !q.scheduled {
            q.scheduled = true;
            self.sched.schedule(now, Event::Invoke { node: node.clone(), epoch, binding: i });
        }
        Ok(())
    }

    pub fn invocation_count(&self, node: &NodeId) -> u64 {
        self.nodes.get(node).map(|n| n.invocations).unwrap_or(0)
    }

    /// Every log on every node as `(node, log) -> [(seq, message_id, payload)]`,
    /// leaving out timestamps and the system logs.
    pub fn log_contents(&self) -> BTreeMap<(NodeId, String), Vec<(u64, MessageId, Vec<u8>)>> {
        let mut out = BTreeMap::new();
        for (id, n) in &self.nodes {
            for name in n.store.names() {
                if name.starts_with("sys.") {
                    continue;
                }
                let log = n.store.get(&name).unwrap();
                let entries = log.scan(1, log.last_seq()).map(|s| s.entries).unwrap_or_default();
                out.insert(
                    (id.clone(), name),
                    entries.into_iter().map(|e| (e.seq, e.message_id, e.payload)).collect(),
                );
            }
        }
        out
    }

    pub fn failures(&self, node: &NodeId) -> Vec<String> {
        let Ok(log) = self.log(node, FAILURE_LOG) else { return Vec::new() };
        log.scan(1, log.last_seq())
            .map(|s| s.entries.into_iter().map(|e| String::from_utf8_lossy(&e.payload).into_owned()).collect())
            .unwrap_or_default()
    }
}

/// Convenience for building effects destined to `(node, log)` from a node
/// that may or may not be the same one.
pub fn effect_to(here: &NodeId, node: &NodeId, log: &str, payload: Vec<u8>) -> AppendEffect {
    if here == node {
        AppendEffect::local(log, payload)
    } else {
        AppendEffect::remote(node.clone(), log, payload)
    }
}
