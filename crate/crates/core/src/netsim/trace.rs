use super::{Delivery, DropReason};
use crate::ids::NodeId;
use crate::time::SimTime;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write;

/// One line of an exported event trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t_us: u64,
    pub kind: String,
    pub from: String,
    pub to: String,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arrive_us: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duplicate_us: Option<u64>,
}

impl TraceRecord {
    pub fn send(now: SimTime, from: &NodeId, to: &NodeId, len: usize, outcome: &Delivery) -> Self {
        let (kind, arrive, dup) = match outcome {
            Delivery::Arrives { at, duplicate_at } => ("send", Some(at.0), duplicate_at.map(|d| d.0)),
            Delivery::Dropped(DropReason::Loss) => ("drop_loss", None, None),
            Delivery::Dropped(DropReason::Partition) => ("drop_partition", None, None),
        };
        TraceRecord {
            t_us: now.0,
            kind: kind.into(),
            from: from.to_string(),
            to: to.to_string(),
            detail: format!("{len}B"),
            arrive_us: arrive,
            duplicate_us: dup,
        }
    }

    pub fn note(now: SimTime, kind: &str, node: &NodeId, detail: String) -> Self {
        TraceRecord {
            t_us: now.0,
            kind: kind.into(),
            from: node.to_string(),
            to: String::new(),
            detail,
            arrive_us: None,
            duplicate_us: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        Sha256::digest(&buf).iter().map(|b| format!("{b:02x}")).collect()
    }
}
