//! Strict, typed dataflow on top of fabric logs.
//!
//! Every input port of a graph node is an operand log on the node's fabric
//! placement, and every node has one output log. Operands are
//! single-assignment per `(node, port, iteration)`: their message ids are
//! derived from that slot, so a re-delivered operand is absorbed by dedup.
//! The firing handler is bound to every input log of its node. On each
//! append it scans the sibling logs for the same iteration and fires only
//! when all of them hold an operand. Nothing ever waits.

use crate::events::{AppendEffect, HandlerContext, HandlerResult};
use crate::fabric::{effect_to, Fabric, FabricError};
use crate::ids::{MessageId, NodeId};
use crate::logstore::{LogEntry, LogHandle};
use crate::transport::OpId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

pub const DEFAULT_WINDOW: u64 = 256;

/// iteration u64, arity u16, type tag u8
const OPERAND_HEADER: u32 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueType {
    Int64,
    Float64,
    Bytes { max_len: u32 },
    FloatVec { len: u32 },
}

impl ValueType {
    fn body_len(&self) -> u32 {
        match self {
            ValueType::Int64 | ValueType::Float64 => 8,
            ValueType::Bytes { max_len } => 4 + max_len,
            ValueType::FloatVec { len } => 4 + 8 * len,
        }
    }

    fn is_numeric(&self) -> bool {
        matches!(self, ValueType::Int64 | ValueType::Float64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Value {
    Int64(i64),
    Float64(f64),
    Bytes(Vec<u8>),
    FloatVec(Vec<f64>),
}

impl Value {
    pub fn conforms(&self, t: &ValueType) -> bool {
        match (self, t) {
            (Value::Int64(_), ValueType::Int64) | (Value::Float64(_), ValueType::Float64) => true,
            (Value::Bytes(b), ValueType::Bytes { max_len }) => b.len() <= *max_len as usize,
            (Value::FloatVec(v), ValueType::FloatVec { len }) => v.len() == *len as usize,
            _ => false,
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Value::Int64(_) => 1,
            Value::Float64(_) => 2,
            Value::Bytes(_) => 3,
            Value::FloatVec(_) => 4,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float64(v) => Some(*v),
            _ => None,
        }
    }
}

/// One value in one slot, as stored in an operand or output log.
#[derive(Debug, Clone, PartialEq)]
pub struct Operand {
    pub iteration: u64,
    /// Operands the producing node consumed when it fired; 0 for injected
    /// values and forwarded copies.
    pub arity: u16,
    pub value: Value,
}

impl Operand {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(32);
        b.extend_from_slice(&self.iteration.to_le_bytes());
        b.extend_from_slice(&self.arity.to_le_bytes());
        b.push(self.value.tag());
        match &self.value {
            Value::Int64(v) => b.extend_from_slice(&v.to_le_bytes()),
            Value::Float64(v) => b.extend_from_slice(&v.to_le_bytes()),
            Value::Bytes(v) => {
                b.extend_from_slice(&(v.len() as u32).to_le_bytes());
                b.extend_from_slice(v);
            }
            Value::FloatVec(v) => {
                b.extend_from_slice(&(v.len() as u32).to_le_bytes());
                for x in v {
                    b.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        b
    }

    pub fn decode(b: &[u8]) -> Option<Operand> {
        let iteration = u64::from_le_bytes(b.get(0..8)?.try_into().ok()?);
        let arity = u16::from_le_bytes(b.get(8..10)?.try_into().ok()?);
        let body = b.get(11..)?;
        let word = |at: usize| -> Option<[u8; 8]> { body.get(at..at + 8)?.try_into().ok() };
        let count = || -> Option<usize> { Some(u32::from_le_bytes(body.get(0..4)?.try_into().ok()?) as usize) };
        let value = match *b.get(10)? {
            1 => Value::Int64(i64::from_le_bytes(word(0)?)),
            2 => Value::Float64(f64::from_le_bytes(word(0)?)),
            3 => Value::Bytes(body.get(4..4 + count()?)?.to_vec()),
            4 => Value::FloatVec((0..count()?).map(|i| word(4 + 8 * i).map(f64::from_le_bytes)).collect::<Option<_>>()?),
            _ => return None,
        };
        Some(Operand { iteration, arity, value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NodeOp {
    /// Sum of all inputs (all of the output's numeric type).
    Add,
    Mul,
    Identity,
    /// A function from the [`OpRegistry`].
    Func { name: String },
    /// Embedded task: the node's inputs are shipped as a [`TaskRequest`] to
    /// `service_log` on `service_node`, and whoever serves it appends the
    /// output through [`task_result`]. When `gate` names a registered
    /// function that returns `Int64(0)`, the node instead outputs `skip`
    /// immediately.
    Task { service_node: NodeId, service_log: String, gate: Option<String>, skip: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphNode {
    pub id: String,
    pub inputs: Vec<PortSpec>,
    pub output: ValueType,
    pub op: NodeOp,
    pub placement: NodeId,
}

/// Output of `from` feeds input `port` of `to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub port: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortRef {
    pub node: String,
    pub port: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataflowGraph {
    pub name: String,
    pub nodes: Vec<GraphNode>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    /// Inputs fed from outside the graph via [`inject`].
    #[serde(default)]
    pub externals: Vec<PortRef>,
    /// Iterations of history each operand log retains.
    #[serde(default = "default_window")]
    pub window: u64,
}

fn default_window() -> u64 {
    DEFAULT_WINDOW
}

pub type OpFn = Arc<dyn Fn(&[Value]) -> Result<Value, String> + Send + Sync>;

#[derive(Clone, Default)]
pub struct OpRegistry {
    ops: BTreeMap<String, OpFn>,
}

impl OpRegistry {
    pub fn register<F>(&mut self, name: &str, f: F)
    where
        F: Fn(&[Value]) -> Result<Value, String> + Send + Sync + 'static,
    {
        self.ops.insert(name.to_string(), Arc::new(f));
    }

    pub fn get(&self, name: &str) -> Option<OpFn> {
        self.ops.get(name).cloned()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataflowError {
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("cycle detected through {0}")]
    CycleDetected(String),
    #[error("unknown placement {0}")]
    UnknownPlacement(NodeId),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("unknown op {0}")]
    UnknownOp(String),
    #[error("{node}.{port} is not an external input")]
    NotExternal { node: String, port: String },
    #[error("conflicting value for {node}.{port} iteration {iteration}")]
    DoubleAssignmentConflict { node: String, port: String, iteration: u64 },
    #[error("corrupt graph state: {0}")]
    CorruptGraphState(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

/// Request shipped by a task node to the service that runs it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub graph: String,
    pub node: String,
    pub iteration: u64,
    pub inputs: Vec<Value>,
    pub reply_node: NodeId,
    pub reply_log: String,
}

impl TaskRequest {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("task request serializes")
    }

    pub fn decode(b: &[u8]) -> Option<TaskRequest> {
        serde_json::from_slice(b).ok()
    }
}

/// Message id of the value in slot `(node, port, iteration)`; the output
/// slot uses port `out`.
pub fn slot_id(graph: &str, node: &str, port: &str, iteration: u64) -> MessageId {
    MessageId::derive(&[b"operand", graph.as_bytes(), node.as_bytes(), port.as_bytes(), &iteration.to_le_bytes()])
}

fn task_id(graph: &str, node: &str, iteration: u64) -> MessageId {
    MessageId::derive(&[b"task", graph.as_bytes(), node.as_bytes(), &iteration.to_le_bytes()])
}

pub fn input_log_name(graph: &str, node: &str, port: &str) -> String {
    format!("df.{graph}.{node}.in.{port}")
}

pub fn output_log_name(graph: &str, node: &str) -> String {
    format!("df.{graph}.{node}.out")
}

fn fire_handler_id(graph: &str, node: &str) -> String {
    format!("df.{graph}.{node}.fire")
}

fn forward_handler_id(graph: &str, node: &str) -> String {
    format!("df.{graph}.{node}.fwd")
}

/// A graph whose logs exist and whose handlers are bound.
#[derive(Debug, Clone)]
pub struct DeployedGraph {
    graph: Arc<DataflowGraph>,
    logs: Vec<(NodeId, String)>,
}

impl DeployedGraph {
    pub fn graph(&self) -> &DataflowGraph {
        &self.graph
    }

    pub fn logs(&self) -> &[(NodeId, String)] {
        &self.logs
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.graph.nodes.iter().find(|n| n.id == id)
    }

    /// Effect a handler on `here` emits to feed an external input; the
    /// handler-side counterpart of [`inject`].
    pub fn external_effect(&self, here: &NodeId, node: &str, port: &str, iteration: u64, value: Value) -> Result<AppendEffect, DataflowError> {
        let pref = PortRef { node: node.to_string(), port: port.to_string() };
        if !self.graph.externals.contains(&pref) {
            return Err(DataflowError::NotExternal { node: node.into(), port: port.into() });
        }
        let n = self.node(node).unwrap();
        let ty = &n.inputs.iter().find(|p| p.name == port).unwrap().ty;
        if !value.conforms(ty) {
            return Err(DataflowError::TypeMismatch(format!("{node}.{port} takes {ty:?}, got {value:?}")));
        }
        let op = Operand { iteration, arity: 0, value };
        let log = input_log_name(&self.graph.name, node, port);
        Ok(effect_to(here, &n.placement, &log, op.encode()).with_id(slot_id(&self.graph.name, node, port, iteration)))
    }

    /// Every output operand of `node`, in log order.
    pub fn outputs(&self, fabric: &Fabric, node: &str) -> Result<Vec<Operand>, DataflowError> {
        let n = self.node(node).ok_or_else(|| DataflowError::InvalidGraph(format!("no node {node}")))?;
        let log = fabric.log(&n.placement, &output_log_name(&self.graph.name, node))?;
        all_operands(&log)
    }
}

fn all_operands(log: &LogHandle) -> Result<Vec<Operand>, DataflowError> {
    let entries = log.scan(log.earliest_seq(), log.last_seq()).map(|s| s.entries).unwrap_or_default();
    entries
        .iter()
        .map(|e| Operand::decode(&e.payload).ok_or_else(|| DataflowError::CorruptGraphState(format!("{} seq {}", log.name(), e.seq))))
        .collect()
}

fn find_operand(log: &LogHandle, iteration: u64) -> Result<Option<Operand>, String> {
    let entries = log.scan(log.earliest_seq(), log.last_seq()).map_err(|e| e.to_string())?.entries;
    for e in entries.iter().rev() {
        let op = Operand::decode(&e.payload).ok_or_else(|| format!("undecodable operand at {} seq {}", log.name(), e.seq))?;
        if op.iteration == iteration {
            return Ok(Some(op));
        }
    }
    Ok(None)
}

/// Type, wiring and acyclicity checks.
pub fn validate(graph: &DataflowGraph, ops: &OpRegistry) -> Result<(), DataflowError> {
    let bad = |m: String| Err(DataflowError::InvalidGraph(m));
    let mut by_id = BTreeMap::new();
    for n in &graph.nodes {
        if by_id.insert(n.id.as_str(), n).is_some() {
            return bad(format!("duplicate node {}", n.id));
        }
        if n.id.contains('.') || n.inputs.iter().any(|p| p.name.contains('.')) {
            return bad(format!("node and port names may not contain '.': {}", n.id));
        }
    }
    if graph.window == 0 {
        return bad("window must be positive".into());
    }
    let mut wired: BTreeMap<PortRef, usize> = BTreeMap::new();
    for e in &graph.edges {
        let Some(src) = by_id.get(e.from.as_str()) else { return bad(format!("edge from unknown node {}", e.from)) };
        let Some(dst) = by_id.get(e.to.as_str()) else { return bad(format!("edge to unknown node {}", e.to)) };
        let Some(port) = dst.inputs.iter().find(|p| p.name == e.port) else {
            return bad(format!("edge to unknown port {}.{}", e.to, e.port));
        };
        if src.output != port.ty {
            return Err(DataflowError::TypeMismatch(format!(
                "{} outputs {:?} but {}.{} takes {:?}",
                e.from, src.output, e.to, e.port, port.ty
            )));
        }
        *wired.entry(PortRef { node: e.to.clone(), port: e.port.clone() }).or_default() += 1;
    }
    for x in &graph.externals {
        let Some(dst) = by_id.get(x.node.as_str()) else { return bad(format!("external to unknown node {}", x.node)) };
        if !dst.inputs.iter().any(|p| p.name == x.port) {
            return bad(format!("external to unknown port {}.{}", x.node, x.port));
        }
        *wired.entry(x.clone()).or_default() += 1;
    }
    for n in &graph.nodes {
        for p in &n.inputs {
            match wired.get(&PortRef { node: n.id.clone(), port: p.name.clone() }) {
                Some(1) => {}
                Some(k) => return bad(format!("{}.{} wired {k} times", n.id, p.name)),
                None => return bad(format!("{}.{} is not wired", n.id, p.name)),
            }
        }
        check_op(n, ops)?;
    }
    // Kahn's algorithm over the within-iteration edges
    let mut indeg: BTreeMap<&str, usize> = graph.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
    for e in &graph.edges {
        *indeg.get_mut(e.to.as_str()).unwrap() += 1;
    }
    let mut ready: VecDeque<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut seen = 0;
    while let Some(n) = ready.pop_front() {
        seen += 1;
        for e in graph.edges.iter().filter(|e| e.from == n) {
            let d = indeg.get_mut(e.to.as_str()).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push_back(e.to.as_str());
            }
        }
    }
    if seen < graph.nodes.len() {
        let stuck: Vec<&str> = indeg.iter().filter(|(_, d)| **d > 0).map(|(n, _)| *n).collect();
        return Err(DataflowError::CycleDetected(stuck.join(", ")));
    }
    Ok(())
}

fn check_op(n: &GraphNode, ops: &OpRegistry) -> Result<(), DataflowError> {
    let mismatch = |m: &str| Err(DataflowError::TypeMismatch(format!("{}: {m}", n.id)));
    if n.inputs.is_empty() {
        return Err(DataflowError::InvalidGraph(format!("{} has no inputs", n.id)));
    }
    match &n.op {
        NodeOp::Add | NodeOp::Mul => {
            if !n.output.is_numeric() || n.inputs.iter().any(|p| p.ty != n.output) {
                return mismatch("arithmetic needs numeric inputs of the output type");
            }
        }
        NodeOp::Identity => {
            if n.inputs.len() != 1 || n.inputs[0].ty != n.output {
                return mismatch("identity needs one input of the output type");
            }
        }
        NodeOp::Func { name } => {
            ops.get(name).ok_or_else(|| DataflowError::UnknownOp(name.clone()))?;
        }
        NodeOp::Task { gate, skip, .. } => {
            if let Some(g) = gate {
                ops.get(g).ok_or_else(|| DataflowError::UnknownOp(g.clone()))?;
            }
            if !Value::Bytes(skip.clone()).conforms(&n.output) {
                return mismatch("task output must be bytes wide enough for the skip marker");
            }
        }
    }
    Ok(())
}

fn arith(op: &NodeOp, inputs: &[Value]) -> Result<Value, String> {
    match &inputs[0] {
        Value::Int64(_) => {
            let xs = inputs.iter().map(|v| v.as_i64().ok_or("mixed operand types"));
            let mut acc: i64 = if *op == NodeOp::Add { 0 } else { 1 };
            for x in xs {
                let x = x?;
                acc = if *op == NodeOp::Add { acc.checked_add(x) } else { acc.checked_mul(x) }.ok_or("integer overflow")?;
            }
            Ok(Value::Int64(acc))
        }
        Value::Float64(_) => {
            let xs: Vec<f64> = inputs.iter().map(|v| v.as_f64().ok_or("mixed operand types")).collect::<Result<_, _>>()?;
            Ok(Value::Float64(if *op == NodeOp::Add { xs.iter().sum() } else { xs.iter().product() }))
        }
        _ => Err("arithmetic on non-numeric operand".into()),
    }
}

struct FireSpec {
    graph: Arc<DataflowGraph>,
    node: GraphNode,
    input_logs: Vec<String>,
    output_log: String,
    func: Option<OpFn>,
}

impl FireSpec {
    fn fire(&self, entry: &LogEntry, ctx: &HandlerContext<'_>) -> HandlerResult {
        let trigger = Operand::decode(&entry.payload).ok_or("undecodable trigger operand")?;
        let i = trigger.iteration;
        let mut inputs = Vec::with_capacity(self.input_logs.len());
        for name in &self.input_logs {
            let log = ctx.log(name).ok_or_else(|| format!("missing operand log {name}"))?;
            match find_operand(&log, i)? {
                Some(op) => inputs.push(op.value),
                // strictness: not every input has arrived yet
                None => return Ok(Vec::new()),
            }
        }
        let g = &self.graph.name;
        let n = &self.node;
        let out = |value: Value| -> Result<AppendEffect, String> {
            if !value.conforms(&n.output) {
                return Err(format!("{} produced {value:?}, declared {:?}", n.id, n.output));
            }
            let op = Operand { iteration: i, arity: inputs.len() as u16, value };
            Ok(AppendEffect::local(&self.output_log, op.encode()).with_id(slot_id(g, &n.id, "out", i)))
        };
        let effect = match &n.op {
            NodeOp::Add | NodeOp::Mul => out(arith(&n.op, &inputs)?)?,
            NodeOp::Identity => out(inputs[0].clone())?,
            NodeOp::Func { .. } => out((self.func.as_ref().unwrap())(&inputs)?)?,
            NodeOp::Task { service_node, service_log, skip, .. } => {
                let go = match &self.func {
                    Some(gate) => gate(&inputs)?.as_i64().ok_or("gate must return an int")? != 0,
                    None => true,
                };
                if !go {
                    out(Value::Bytes(skip.clone()))?
                } else {
                    let req = TaskRequest {
                        graph: g.clone(),
                        node: n.id.clone(),
                        iteration: i,
                        inputs,
                        reply_node: n.placement.clone(),
                        reply_log: self.output_log.clone(),
                    };
                    effect_to(ctx.node, service_node, service_log, req.encode()).with_id(task_id(g, &n.id, i))
                }
            }
        };
        Ok(vec![effect])
    }
}

/// Effect that records a task's result as the task node's output. The
/// serving side may send it with [`Fabric::append_local`] or
/// [`Fabric::remote_append`]; either way it lands in the right slot once.
pub fn task_result(req: &TaskRequest, value: Value) -> (NodeId, String, Vec<u8>, MessageId) {
    let op = Operand { iteration: req.iteration, arity: req.inputs.len() as u16, value };
    (req.reply_node.clone(), req.reply_log.clone(), op.encode(), slot_id(&req.graph, &req.node, "out", req.iteration))
}

/// Creates logs and binds firing handlers for every graph node.
pub fn compile(fabric: &mut Fabric, graph: DataflowGraph, ops: &OpRegistry) -> Result<DeployedGraph, DataflowError> {
    validate(&graph, ops)?;
    let known: BTreeSet<NodeId> = fabric.node_ids().into_iter().collect();
    for n in &graph.nodes {
        if !known.contains(&n.placement) {
            return Err(DataflowError::UnknownPlacement(n.placement.clone()));
        }
        if let NodeOp::Task { service_node, .. } = &n.op {
            if !known.contains(service_node) {
                return Err(DataflowError::UnknownPlacement(service_node.clone()));
            }
        }
    }
    let graph = Arc::new(graph);
    let g = graph.name.clone();
    let mut logs = Vec::new();
    for n in &graph.nodes {
        for p in &n.inputs {
            let name = input_log_name(&g, &n.id, &p.name);
            fabric.create_log(&n.placement, &name, OPERAND_HEADER + p.ty.body_len(), graph.window)?;
            logs.push((n.placement.clone(), name));
        }
        let name = output_log_name(&g, &n.id);
        fabric.create_log(&n.placement, &name, OPERAND_HEADER + n.output.body_len(), graph.window)?;
        logs.push((n.placement.clone(), name));
    }
    for n in &graph.nodes {
        let func = match &n.op {
            NodeOp::Func { name } => ops.get(name),
            NodeOp::Task { gate: Some(gate), .. } => ops.get(gate),
            _ => None,
        };
        let spec = Arc::new(FireSpec {
            graph: graph.clone(),
            node: n.clone(),
            input_logs: n.inputs.iter().map(|p| input_log_name(&g, &n.id, &p.name)).collect(),
            output_log: output_log_name(&g, &n.id),
            func,
        });
        let hid = fire_handler_id(&g, &n.id);
        let s = spec.clone();
        fabric.register_handler(&n.placement, &hid, move |e, ctx| s.fire(e, ctx))?;
        for log in &spec.input_logs {
            fabric.bind(&n.placement, log, &hid)?;
        }

        let consumers: Vec<(NodeId, String, String, String)> = graph
            .edges
            .iter()
            .filter(|e| e.from == n.id)
            .map(|e| {
                let dst = graph.nodes.iter().find(|d| d.id == e.to).unwrap();
                (dst.placement.clone(), input_log_name(&g, &e.to, &e.port), e.to.clone(), e.port.clone())
            })
            .collect();
        if !consumers.is_empty() {
            let fid = forward_handler_id(&g, &n.id);
            let gname = g.clone();
            fabric.register_handler(&n.placement, &fid, move |e, ctx| {
                let op = Operand::decode(&e.payload).ok_or("undecodable output operand")?;
                let fwd = Operand { iteration: op.iteration, arity: 0, value: op.value };
                Ok(consumers
                    .iter()
                    .map(|(node, log, to, port)| {
                        effect_to(ctx.node, node, log, fwd.encode()).with_id(slot_id(&gname, to, port, op.iteration))
                    })
                    .collect())
            })?;
            fabric.bind(&n.placement, &output_log_name(&g, &n.id), &fid)?;
        }
    }
    Ok(DeployedGraph { graph, logs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Injected {
    Local(u64),
    Remote(OpId),
    /// The identical value already occupies the slot.
    AlreadyPresent,
}

/// Feeds an external input from fabric node `from`.
pub fn inject(
    fabric: &mut Fabric,
    deployed: &DeployedGraph,
    from: &NodeId,
    node: &str,
    port: &str,
    iteration: u64,
    value: Value,
) -> Result<Injected, DataflowError> {
    let g = &deployed.graph;
    let pref = PortRef { node: node.to_string(), port: port.to_string() };
    if !g.externals.contains(&pref) {
        return Err(DataflowError::NotExternal { node: node.into(), port: port.into() });
    }
    let n = deployed.node(node).unwrap();
    let spec = n.inputs.iter().find(|p| p.name == port).unwrap();
    if !value.conforms(&spec.ty) {
        return Err(DataflowError::TypeMismatch(format!("{node}.{port} takes {:?}, got {value:?}", spec.ty)));
    }
    let op = Operand { iteration, arity: 0, value };
    let payload = op.encode();
    let log_name = input_log_name(&g.name, node, port);
    let target = fabric.log(&n.placement, &log_name)?;
    if let Some(existing) = find_operand(&target, iteration).map_err(DataflowError::CorruptGraphState)? {
        return if existing.encode() == payload {
            Ok(Injected::AlreadyPresent)
        } else {
            Err(DataflowError::DoubleAssignmentConflict { node: node.into(), port: port.into(), iteration })
        };
    }
    let id = slot_id(&g.name, node, port, iteration);
    if from == &n.placement {
        Ok(Injected::Local(fabric.append_local(from, &log_name, &payload, id)?))
    } else {
        Ok(Injected::Remote(fabric.remote_append(from, &n.placement, &log_name, payload, id)?))
    }
}

/// Re-fires every node whose inputs for some iteration are all present but
/// whose output is missing, and re-forwards outputs consumers have not
/// received. Returns how many invocations were queued.
pub fn resume(fabric: &mut Fabric, deployed: &DeployedGraph) -> Result<usize, DataflowError> {
    let g = deployed.graph.clone();
    let mut queued = 0;
    for n in &g.nodes {
        let out_log = fabric.log(&n.placement, &output_log_name(&g.name, &n.id))?;
        let done: BTreeSet<u64> = all_operands(&out_log)?.iter().map(|o| o.iteration).collect();
        let ins: Vec<LogHandle> = n
            .inputs
            .iter()
            .map(|p| fabric.log(&n.placement, &input_log_name(&g.name, &n.id, &p.name)))
            .collect::<Result<_, _>>()?;
        let mut per_log: Vec<BTreeMap<u64, LogEntry>> = Vec::new();
        for log in &ins {
            let entries = log.scan(log.earliest_seq(), log.last_seq()).map(|s| s.entries).unwrap_or_default();
            let mut m = BTreeMap::new();
            for e in entries {
                let op = Operand::decode(&e.payload).ok_or_else(|| DataflowError::CorruptGraphState(format!("{} seq {}", log.name(), e.seq)))?;
                m.entry(op.iteration).or_insert(e);
            }
            per_log.push(m);
        }
        let first_log = input_log_name(&g.name, &n.id, &n.inputs[0].name);
        let hid = fire_handler_id(&g.name, &n.id);
        for (iter, entry) in &per_log[0] {
            if !done.contains(iter) && per_log.iter().all(|m| m.contains_key(iter)) {
                fabric.refire(&n.placement, &first_log, &hid, entry.clone())?;
                queued += 1;
            }
        }

        for e in g.edges.iter().filter(|e| e.from == n.id) {
            let dst = deployed.node(&e.to).unwrap();
            let dst_log = fabric.log(&dst.placement, &input_log_name(&g.name, &e.to, &e.port))?;
            let have: BTreeSet<u64> = all_operands(&dst_log)?.iter().map(|o| o.iteration).collect();
            let entries = out_log.scan(out_log.earliest_seq(), out_log.last_seq()).map(|s| s.entries).unwrap_or_default();
            for entry in entries {
                let op = Operand::decode(&entry.payload).unwrap();
                if !have.contains(&op.iteration) {
                    fabric.refire(&n.placement, &out_log.name(), &forward_handler_id(&g.name, &n.id), entry)?;
                    queued += 1;
                }
            }
        }
    }
    Ok(queued)
}

/// Checks the engine's own record: each output carries the node's full
/// arity, and no iteration has two outputs.
pub fn check_strictness(fabric: &Fabric, deployed: &DeployedGraph) -> Result<(), String> {
    for n in &deployed.graph.nodes {
        let outs = deployed.outputs(fabric, &n.id).map_err(|e| e.to_string())?;
        let mut seen = BTreeSet::new();
        for o in outs {
            if o.arity as usize != n.inputs.len() {
                return Err(format!("{} fired iteration {} with {} of {} operands", n.id, o.iteration, o.arity, n.inputs.len()));
            }
            if !seen.insert(o.iteration) {
                return Err(format!("{} produced iteration {} twice", n.id, o.iteration));
            }
        }
    }
    Ok(())
}
