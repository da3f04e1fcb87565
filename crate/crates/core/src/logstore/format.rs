//! Bit-exact on-disk layout of a log file.
//!
//! ```text
//! header (128 bytes, little-endian)
//!   0   magic        "FABLOG01"
//!   8   version      u32
//!   12  element_size u32
//!   16  capacity     u64
//!   24  next_seq     u64
//!   32  earliest_seq u64
//!   40  name_len     u16
//!   42  name         [u8; 64], zero padded
//!   106 reserved     [u8; 18]
//!   124 crc32        u32 over bytes 0..124
//!
//! record (stride = element_size + 40)
//!   0   seq          u64
//!   8   length       u32   original payload length
//!   12  message_id   [u8; 16]
//!   28  created_at   u64   simulated microseconds
//!   36  payload      [u8; element_size], zero padded
//!   36+element_size crc32 u32 over the preceding bytes of the record
//! ```

use crate::ids::MessageId;
use crate::time::SimTime;

pub const MAGIC: &[u8; 8] = b"FABLOG01";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 128;
pub const MAX_NAME_LEN: usize = 64;
pub const RECORD_OVERHEAD: usize = 40;
const RECORD_PREFIX: usize = 36;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct LogHeader {
    pub name: String,
    pub element_size: u32,
    pub capacity: u64,
    pub next_seq: u64,
    pub earliest_seq: u64,
}

impl LogHeader {
    pub fn record_stride(&self) -> usize {
        self.element_size as usize + RECORD_OVERHEAD
    }

    pub fn slot_of(&self, seq: u64) -> u64 {
        (seq - 1) % self.capacity
    }

    pub fn slot_offset(&self, slot: u64) -> u64 {
        HEADER_LEN as u64 + slot * self.record_stride() as u64
    }

    /// Number of retained entries.
    pub fn len(&self) -> u64 {
        self.next_seq - self.earliest_seq
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..8].copy_from_slice(MAGIC);
        b[8..12].copy_from_slice(&VERSION.to_le_bytes());
        b[12..16].copy_from_slice(&self.element_size.to_le_bytes());
        b[16..24].copy_from_slice(&self.capacity.to_le_bytes());
        b[24..32].copy_from_slice(&self.next_seq.to_le_bytes());
        b[32..40].copy_from_slice(&self.earliest_seq.to_le_bytes());
        let name = self.name.as_bytes();
        b[40..42].copy_from_slice(&(name.len() as u16).to_le_bytes());
        b[42..42 + name.len()].copy_from_slice(name);
        let crc = crc32fast::hash(&b[..124]);
        b[124..128].copy_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Result<LogHeader, String> {
        if b.len() < HEADER_LEN {
            return Err(format!("header truncated ({} of {HEADER_LEN} bytes)", b.len()));
        }
        if &b[0..8] != MAGIC {
            return Err("bad magic".into());
        }
        let crc = u32::from_le_bytes(b[124..128].try_into().unwrap());
        if crc != crc32fast::hash(&b[..124]) {
            return Err("header checksum mismatch".into());
        }
        let version = u32::from_le_bytes(b[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let element_size = u32::from_le_bytes(b[12..16].try_into().unwrap());
        let capacity = u64::from_le_bytes(b[16..24].try_into().unwrap());
        let next_seq = u64::from_le_bytes(b[24..32].try_into().unwrap());
        let earliest_seq = u64::from_le_bytes(b[32..40].try_into().unwrap());
        let name_len = u16::from_le_bytes(b[40..42].try_into().unwrap()) as usize;
        if element_size == 0 || capacity == 0 || next_seq == 0 || earliest_seq == 0 {
            return Err("zero field in header".into());
        }
        if name_len > MAX_NAME_LEN {
            return Err("name length out of range".into());
        }
        if earliest_seq > next_seq || next_seq - earliest_seq > capacity {
            return Err("sequence bounds inconsistent".into());
        }
        let name = std::str::from_utf8(&b[42..42 + name_len])
            .map_err(|_| "name is not utf-8".to_string())?
            .to_string();
        Ok(LogHeader { name, element_size, capacity, next_seq, earliest_seq })
    }
}

/// A single entry as returned by reads; `payload` has the original length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub seq: u64,
    pub payload: Vec<u8>,
    pub message_id: MessageId,
    pub created_at: SimTime,
}

pub fn encode_record(element_size: usize, entry: &LogEntry) -> Vec<u8> {
    let mut b = vec![0u8; element_size + RECORD_OVERHEAD];
    b[0..8].copy_from_slice(&entry.seq.to_le_bytes());
    b[8..12].copy_from_slice(&(entry.payload.len() as u32).to_le_bytes());
    b[12..28].copy_from_slice(&entry.message_id.0);
    b[28..36].copy_from_slice(&entry.created_at.0.to_le_bytes());
    b[RECORD_PREFIX..RECORD_PREFIX + entry.payload.len()].copy_from_slice(&entry.payload);
    let end = RECORD_PREFIX + element_size;
    let crc = crc32fast::hash(&b[..end]);
    b[end..end + 4].copy_from_slice(&crc.to_le_bytes());
    b
}

/// Outcome of looking at one record slot.
#[derive(Debug)]
pub enum SlotState {
    Valid(LogEntry),
    /// Fewer than `stride` bytes available (file ends inside the slot).
    Partial,
    /// Full length but the checksum or framing does not hold.
    Bad,
}

pub fn decode_record(element_size: usize, b: &[u8]) -> SlotState {
    let stride = element_size + RECORD_OVERHEAD;
    if b.len() < stride {
        return SlotState::Partial;
    }
    let end = RECORD_PREFIX + element_size;
    let crc = u32::from_le_bytes(b[end..end + 4].try_into().unwrap());
    if crc != crc32fast::hash(&b[..end]) {
        return SlotState::Bad;
    }
    let seq = u64::from_le_bytes(b[0..8].try_into().unwrap());
    let len = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
    if seq == 0 || len > element_size {
        return SlotState::Bad;
    }
    let mut id = [0u8; 16];
    id.copy_from_slice(&b[12..28]);
    let created_at = SimTime(u64::from_le_bytes(b[28..36].try_into().unwrap()));
    SlotState::Valid(LogEntry {
        seq,
        payload: b[RECORD_PREFIX..RECORD_PREFIX + len].to_vec(),
        message_id: MessageId(id),
        created_at,
    })
}
