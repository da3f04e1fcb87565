//! Persistent append-only logs with a fixed element size and atomic,
//! monotonic sequence assignment.
//!
//! Logs are circular: once `capacity` entries are retained, each append
//! evicts the oldest entry and reports it in [`AppendOutcome::evicted`].
//! Every append carries a writer-supplied [`MessageId`]; re-appending a known
//! id returns the original sequence number without writing anything.

mod dedup;
pub mod format;
pub mod storage;

pub use dedup::{DedupIndex, DEFAULT_DEDUP_CAPACITY};
pub use format::{LogEntry, LogHeader};
pub use storage::{FileStorage, MemStorage, Storage};

use crate::ids::MessageId;
use crate::time::SimTime;
use format::{decode_record, encode_record, SlotState, HEADER_LEN, MAX_NAME_LEN};
use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log `{0}` already exists")]
    NameCollision(String),
    #[error("invalid log geometry: {0}")]
    InvalidSize(String),
    #[error("payload of {len} bytes exceeds element size {element_size}")]
    PayloadTooLarge { len: usize, element_size: u32 },
    #[error("sequence {seq} was evicted (earliest retained is {earliest})")]
    SeqEvicted { seq: u64, earliest: u64 },
    #[error("sequence {seq} not yet assigned (next is {next})")]
    SeqNotYetAssigned { seq: u64, next: u64 },
    #[error("sequence 0 is reserved")]
    ReservedSeq,
    #[error("corrupt log: {0}")]
    CorruptHeader(String),
    #[error("unknown log `{0}`")]
    UnknownLog(String),
    #[error("storage failure: {0}")]
    Storage(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, LogError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppendOutcome {
    pub seq: u64,
    /// True when the message id was already known and nothing was written.
    pub duplicate: bool,
    /// Sequence number pushed out of the circular window by this append.
    pub evicted: Option<u64>,
}

/// Result of a range scan. `truncated` names the requested sub-range that
/// had already been evicted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScanResult {
    pub entries: Vec<LogEntry>,
    pub truncated: Option<(u64, u64)>,
}

/// What recovery had to do to bring a log back.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct RecoveryReport {
    pub torn_record_discarded: bool,
    /// `next_seq` stored in the header before recovery.
    pub header_next_seq: u64,
    pub recovered_next_seq: u64,
    pub retained: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct LogOptions {
    pub dedup_capacity: usize,
    /// fsync after every append.
    pub sync: bool,
}

impl Default for LogOptions {
    fn default() -> Self {
        LogOptions { dedup_capacity: DEFAULT_DEDUP_CAPACITY, sync: true }
    }
}

struct Inner {
    header: LogHeader,
    storage: Box<dyn Storage>,
    dedup: DedupIndex,
}

/// One log. Cheap to share behind an [`Arc`]; all methods take `&self`.
pub struct Log {
    inner: Mutex<Inner>,
}

pub type LogHandle = Arc<Log>;

impl Log {
    pub fn create(
        name: &str,
        element_size: u32,
        capacity: u64,
        mut storage: Box<dyn Storage>,
        journal: Option<Box<dyn Storage>>,
        opts: LogOptions,
    ) -> Result<Log> {
        validate_geometry(name, element_size, capacity)?;
        let header = LogHeader {
            name: name.to_string(),
            element_size,
            capacity,
            next_seq: 1,
            earliest_seq: 1,
        };
        storage.set_len(0)?;
        storage.write_at(0, &header.encode())?;
        storage.sync()?;
        let mut journal = journal;
        if let Some(j) = journal.as_mut() {
            j.set_len(0)?;
        }
        Ok(Log {
            inner: Mutex::new(Inner {
                header,
                storage,
                dedup: DedupIndex::new(opts.dedup_capacity, journal),
            }),
        })
    }

    /// Reopens a persisted log. A torn final record is discarded; any other
    /// damage is reported as [`LogError::CorruptHeader`].
    pub fn recover(
        storage: Box<dyn Storage>,
        journal: Option<Box<dyn Storage>>,
        opts: LogOptions,
    ) -> Result<(Log, RecoveryReport)> {
        let (mut header, entries, report) = scan_storage(storage.as_ref())?;
        let mut storage = storage;
        if report.torn_record_discarded || report.header_next_seq != header.next_seq {
            storage.write_at(0, &header.encode())?;
            storage.sync()?;
        }
        let mut dedup = DedupIndex::new(opts.dedup_capacity, journal);
        dedup.load()?;
        for e in &entries {
            dedup.remember(e.message_id, e.seq);
        }
        header.next_seq = report.recovered_next_seq;
        Ok((Log { inner: Mutex::new(Inner { header, storage, dedup }) }, report))
    }

    pub fn header(&self) -> LogHeader {
        self.inner.lock().unwrap().header.clone()
    }

    pub fn name(&self) -> String {
        self.inner.lock().unwrap().header.name.clone()
    }

    pub fn element_size(&self) -> u32 {
        self.inner.lock().unwrap().header.element_size
    }

    pub fn next_seq(&self) -> u64 {
        self.inner.lock().unwrap().header.next_seq
    }

    pub fn earliest_seq(&self) -> u64 {
        self.inner.lock().unwrap().header.earliest_seq
    }

    /// Latest assigned sequence number, or 0 if nothing was ever appended.
    pub fn last_seq(&self) -> u64 {
        self.next_seq() - 1
    }

    pub fn append(&self, payload: &[u8], message_id: MessageId, now: SimTime) -> Result<AppendOutcome> {
        let mut g = self.inner.lock().unwrap();
        let inner = &mut *g;
        if payload.len() > inner.header.element_size as usize {
            return Err(LogError::PayloadTooLarge {
                len: payload.len(),
                element_size: inner.header.element_size,
            });
        }
        if let Some(seq) = inner.dedup.get(&message_id) {
            return Ok(AppendOutcome { seq, duplicate: true, evicted: None });
        }
        let seq = inner.header.next_seq;
        let entry = LogEntry { seq, payload: payload.to_vec(), message_id, created_at: now };
        let rec = encode_record(inner.header.element_size as usize, &entry);
        let off = inner.header.slot_offset(inner.header.slot_of(seq));
        inner.storage.write_at(off, &rec)?;
        inner.storage.sync()?;

        let mut evicted = None;
        inner.header.next_seq += 1;
        if inner.header.len() > inner.header.capacity {
            evicted = Some(inner.header.earliest_seq);
            inner.header.earliest_seq += 1;
        }
        inner.storage.write_at(0, &inner.header.encode())?;
        inner.storage.sync()?;
        inner.dedup.insert(message_id, seq)?;
        Ok(AppendOutcome { seq, duplicate: false, evicted })
    }

    /// Sequence number a message id was assigned, if the dedup index knows it.
    pub fn lookup(&self, message_id: &MessageId) -> Option<u64> {
        self.inner.lock().unwrap().dedup.get(message_id)
    }

    pub fn read(&self, seq: u64) -> Result<LogEntry> {
        let g = self.inner.lock().unwrap();
        read_locked(&g, seq)
    }

    /// Entries in `[from, to]` in sequence order. Entries beyond the newest
    /// assigned sequence are simply absent; evicted ones are reported in
    /// [`ScanResult::truncated`].
    pub fn scan(&self, from: u64, to: u64) -> Result<ScanResult> {
        let g = self.inner.lock().unwrap();
        let h = &g.header;
        let mut out = ScanResult::default();
        if from > to {
            return Ok(out);
        }
        let from = from.max(1);
        if from < h.earliest_seq {
            out.truncated = Some((from, to.min(h.earliest_seq - 1)));
        }
        let lo = from.max(h.earliest_seq);
        let hi = to.min(h.next_seq.saturating_sub(1));
        for seq in lo..=hi {
            out.entries.push(read_locked(&g, seq)?);
        }
        Ok(out)
    }

    /// The newest `n` retained entries, oldest first.
    pub fn tail(&self, n: u64) -> Result<Vec<LogEntry>> {
        let (earliest, next) = {
            let g = self.inner.lock().unwrap();
            (g.header.earliest_seq, g.header.next_seq)
        };
        if next == earliest || n == 0 {
            return Ok(Vec::new());
        }
        let from = next.saturating_sub(n).max(earliest);
        Ok(self.scan(from, next - 1)?.entries)
    }

    /// Changes the element size, rewriting every retained record. Clients
    /// that cached the old size will have their next append rejected.
    pub fn resize(&self, element_size: u32) -> Result<()> {
        let mut g = self.inner.lock().unwrap();
        validate_geometry(&g.header.name, element_size, g.header.capacity)?;
        let mut entries = Vec::new();
        for seq in g.header.earliest_seq..g.header.next_seq {
            entries.push(read_locked(&g, seq)?);
        }
        if let Some(e) = entries.iter().find(|e| e.payload.len() > element_size as usize) {
            return Err(LogError::PayloadTooLarge { len: e.payload.len(), element_size });
        }
        g.header.element_size = element_size;
        let header = g.header.clone();
        g.storage.set_len(HEADER_LEN as u64)?;
        for e in &entries {
            let off = header.slot_offset(header.slot_of(e.seq));
            g.storage.write_at(off, &encode_record(element_size as usize, e))?;
        }
        g.storage.write_at(0, &header.encode())?;
        g.storage.sync()?;
        Ok(())
    }
}

fn read_locked(g: &Inner, seq: u64) -> Result<LogEntry> {
    let h = &g.header;
    if seq == 0 {
        return Err(LogError::ReservedSeq);
    }
    if seq >= h.next_seq {
        return Err(LogError::SeqNotYetAssigned { seq, next: h.next_seq });
    }
    if seq < h.earliest_seq {
        return Err(LogError::SeqEvicted { seq, earliest: h.earliest_seq });
    }
    let mut buf = vec![0u8; h.record_stride()];
    g.storage.read_at(h.slot_offset(h.slot_of(seq)), &mut buf)?;
    match decode_record(h.element_size as usize, &buf) {
        SlotState::Valid(e) if e.seq == seq => Ok(e),
        _ => Err(LogError::CorruptHeader(format!("record {seq} unreadable"))),
    }
}

fn validate_geometry(name: &str, element_size: u32, capacity: u64) -> Result<()> {
    if element_size == 0 {
        return Err(LogError::InvalidSize("element_size must be at least 1".into()));
    }
    if capacity == 0 {
        return Err(LogError::InvalidSize("capacity must be at least 1".into()));
    }
    if name.is_empty() || name.len() > MAX_NAME_LEN {
        return Err(LogError::InvalidSize(format!("name must be 1..={MAX_NAME_LEN} bytes")));
    }
    Ok(())
}

/// Reads the header and every record slot, returning the recovered header,
/// the retained entries in sequence order, and what was repaired.
fn scan_storage(storage: &dyn Storage) -> Result<(LogHeader, Vec<LogEntry>, RecoveryReport)> {
    let len = storage.len()?;
    let mut hb = vec![0u8; HEADER_LEN];
    let n = storage.read_at(0, &mut hb)?;
    let header = LogHeader::decode(&hb[..n]).map_err(LogError::CorruptHeader)?;
    let stride = header.record_stride() as u64;
    let body = len.saturating_sub(HEADER_LEN as u64);
    let slots = body.div_ceil(stride).min(header.capacity);

    let mut valid: BTreeMap<u64, LogEntry> = BTreeMap::new();
    let mut damaged: Vec<u64> = Vec::new();
    let mut buf = vec![0u8; stride as usize];
    for slot in 0..slots {
        let got = storage.read_at(header.slot_offset(slot), &mut buf)?;
        match decode_record(header.element_size as usize, &buf[..got]) {
            SlotState::Valid(e) if header.slot_of(e.seq) == slot => {
                valid.insert(e.seq, e);
            }
            _ => damaged.push(slot),
        }
    }

    let corrupt = |why: String| Err(LogError::CorruptHeader(why));
    let (next_seq, earliest_seq) = match (valid.keys().next(), valid.keys().next_back()) {
        (Some(&lo), Some(&hi)) => {
            if (hi - lo + 1) as usize != valid.len() {
                return corrupt("gap in retained records".into());
            }
            if hi - lo + 1 > header.capacity {
                return corrupt("more records than capacity".into());
            }
            match damaged.as_slice() {
                [] => {}
                [slot] if *slot == header.slot_of(hi + 1) => {}
                _ => return corrupt(format!("damaged record slot(s) {damaged:?}")),
            }
            (hi + 1, lo)
        }
        _ => {
            if damaged.len() > 1 {
                return corrupt(format!("damaged record slot(s) {damaged:?}"));
            }
            // Nothing committed survives. If the log was full the damaged
            // slot held an older entry that is gone as well.
            if header.len() == header.capacity && !damaged.is_empty() {
                (header.next_seq, header.next_seq)
            } else {
                (header.earliest_seq, header.earliest_seq)
            }
        }
    };

    let report = RecoveryReport {
        torn_record_discarded: !damaged.is_empty(),
        header_next_seq: header.next_seq,
        recovered_next_seq: next_seq,
        retained: next_seq - earliest_seq,
    };
    let header = LogHeader { next_seq, earliest_seq, ..header };
    Ok((header, valid.into_values().collect(), report))
}

/// Header, entries and recovery diagnosis of a log file, read without
/// modifying it.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LogDump {
    pub header: LogHeader,
    pub recovery: RecoveryReport,
    pub entries: Vec<DumpEntry>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DumpEntry {
    pub seq: u64,
    pub message_id: String,
    pub created_at_us: u64,
    pub length: usize,
    pub payload_hex: String,
}

pub fn inspect(path: &Path) -> Result<LogDump> {
    let storage = FileStorage::open_read_only(path)?;
    let (header, entries, recovery) = scan_storage(&storage)?;
    let entries = entries
        .into_iter()
        .map(|e| DumpEntry {
            seq: e.seq,
            message_id: e.message_id.to_hex(),
            created_at_us: e.created_at.0,
            length: e.payload.len(),
            payload_hex: e.payload.iter().map(|b| format!("{b:02x}")).collect(),
        })
        .collect();
    Ok(LogDump { header, recovery, entries })
}

enum Backing {
    Memory(BTreeMap<String, (MemStorage, MemStorage)>),
    Dir(PathBuf),
}

/// The set of logs hosted by one node, keyed by name.
pub struct LogStore {
    logs: RwLock<BTreeMap<String, LogHandle>>,
    backing: Mutex<Backing>,
    opts: LogOptions,
}

impl LogStore {
    pub fn in_memory() -> Self {
        LogStore {
            logs: RwLock::new(BTreeMap::new()),
            backing: Mutex::new(Backing::Memory(BTreeMap::new())),
            opts: LogOptions { sync: false, ..LogOptions::default() },
        }
    }

    /// Logs live as `<dir>/<name>.log` with a `<name>.dedup` journal.
    pub fn in_dir(dir: impl Into<PathBuf>, opts: LogOptions) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(LogStore {
            logs: RwLock::new(BTreeMap::new()),
            backing: Mutex::new(Backing::Dir(dir)),
            opts,
        })
    }

    pub fn create_log(&self, name: &str, element_size: u32, capacity: u64) -> Result<LogHandle> {
        validate_geometry(name, element_size, capacity)?;
        if name.contains(['/', '\\']) {
            return Err(LogError::InvalidSize("name may not contain path separators".into()));
        }
        let mut logs = self.logs.write().unwrap();
        if logs.contains_key(name) {
            return Err(LogError::NameCollision(name.to_string()));
        }
        let mut backing = self.backing.lock().unwrap();
        let log = match &mut *backing {
            Backing::Memory(m) => {
                if m.contains_key(name) {
                    return Err(LogError::NameCollision(name.to_string()));
                }
                let (data, journal) = (MemStorage::new(), MemStorage::new());
                m.insert(name.to_string(), (data.clone(), journal.clone()));
                Log::create(name, element_size, capacity, Box::new(data), Some(Box::new(journal)), self.opts)?
            }
            Backing::Dir(dir) => {
                let path = dir.join(format!("{name}.log"));
                let data = FileStorage::create(&path, self.opts.sync).map_err(|e| {
                    if e.kind() == io::ErrorKind::AlreadyExists {
                        LogError::NameCollision(name.to_string())
                    } else {
                        LogError::Storage(e)
                    }
                })?;
                let journal = FileStorage::open_or_create(&dir.join(format!("{name}.dedup")), self.opts.sync)?;
                Log::create(name, element_size, capacity, Box::new(data), Some(Box::new(journal)), self.opts)?
            }
        };
        let handle = Arc::new(log);
        logs.insert(name.to_string(), handle.clone());
        Ok(handle)
    }

    pub fn get(&self, name: &str) -> Option<LogHandle> {
        self.logs.read().unwrap().get(name).cloned()
    }

    pub fn require(&self, name: &str) -> Result<LogHandle> {
        self.get(name).ok_or_else(|| LogError::UnknownLog(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.logs.read().unwrap().keys().cloned().collect()
    }

    /// Drops every open handle and reopens all persisted logs, as a node
    /// does after a crash.
    pub fn recover_all(&self) -> Result<Vec<(String, RecoveryReport)>> {
        let backing = self.backing.lock().unwrap();
        let mut logs = self.logs.write().unwrap();
        logs.clear();
        let mut reports = Vec::new();
        match &*backing {
            Backing::Memory(m) => {
                for (name, (data, journal)) in m {
                    let (log, rep) = Log::recover(Box::new(data.clone()), Some(Box::new(journal.clone())), self.opts)?;
                    logs.insert(name.clone(), Arc::new(log));
                    reports.push((name.clone(), rep));
                }
            }
            Backing::Dir(dir) => {
                let mut paths: Vec<_> = std::fs::read_dir(dir)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "log"))
                    .collect();
                paths.sort();
                for p in paths {
                    let (log, rep) = recover_path(&p, self.opts)?;
                    let name = log.name();
                    logs.insert(name.clone(), Arc::new(log));
                    reports.push((name, rep));
                }
            }
        }
        Ok(reports)
    }
}

/// Reopens the log file at `path` (and its `.dedup` journal if present).
pub fn recover_path(path: &Path, opts: LogOptions) -> Result<(Log, RecoveryReport)> {
    let data = FileStorage::open(path, opts.sync)?;
    let journal = FileStorage::open_or_create(&path.with_extension("dedup"), opts.sync)?;
    Log::recover(Box::new(data), Some(Box::new(journal)), opts)
}
