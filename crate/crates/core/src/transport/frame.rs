//! Length-prefixed wire frames.
//!
//! Every frame is `len: u32 LE` (bytes that follow), `type: u8`, then:
//!
//! | type | message        | body                                                                 |
//! |------|----------------|----------------------------------------------------------------------|
//! | 0x01 | SizeRequest    | request_id u64, name_len u16, name                                   |
//! | 0x02 | SizeReply      | request_id u64, status u8, element_size u32                          |
//! | 0x03 | AppendRequest  | message_id [16], element_size u32, name_len u16, name, payload_len u32, payload |
//! | 0x04 | AppendReply    | message_id [16], status u8, seq u64                                  |
//!
//! All integers little-endian. `seq` is 0 whenever status is not Ok.

use crate::ids::MessageId;

pub const SIZE_REQUEST: u8 = 0x01;
pub const SIZE_REPLY: u8 = 0x02;
pub const APPEND_REQUEST: u8 = 0x03;
pub const APPEND_REPLY: u8 = 0x04;

/// Reply status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    UnknownLog = 1,
    PayloadTooLarge = 2,
    SizeMismatch = 3,
    StorageFailure = 4,
}

impl Status {
    pub fn from_u8(b: u8) -> Option<Status> {
        Some(match b {
            0 => Status::Ok,
            1 => Status::UnknownLog,
            2 => Status::PayloadTooLarge,
            3 => Status::SizeMismatch,
            4 => Status::StorageFailure,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    SizeRequest { request_id: u64, log_name: String },
    SizeReply { request_id: u64, status: Status, element_size: u32 },
    AppendRequest { message_id: MessageId, element_size: u32, log_name: String, payload: Vec<u8> },
    AppendReply { message_id: MessageId, status: Status, seq: u64 },
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame truncated")]
    Truncated,
    #[error("unknown frame type {0:#04x}")]
    UnknownType(u8),
    #[error("unknown status {0}")]
    UnknownStatus(u8),
    #[error("length prefix {declared} disagrees with {actual} body bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("log name is not utf-8")]
    BadName,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = vec![0u8; 4];
        match self {
            Frame::SizeRequest { request_id, log_name } => {
                b.push(SIZE_REQUEST);
                b.extend_from_slice(&request_id.to_le_bytes());
                put_name(&mut b, log_name);
            }
            Frame::SizeReply { request_id, status, element_size } => {
                b.push(SIZE_REPLY);
                b.extend_from_slice(&request_id.to_le_bytes());
                b.push(*status as u8);
                b.extend_from_slice(&element_size.to_le_bytes());
            }
            Frame::AppendRequest { message_id, element_size, log_name, payload } => {
                b.push(APPEND_REQUEST);
                b.extend_from_slice(&message_id.0);
                b.extend_from_slice(&element_size.to_le_bytes());
                put_name(&mut b, log_name);
                b.extend_from_slice(&(payload.len() as u32).to_le_bytes());
                b.extend_from_slice(payload);
            }
            Frame::AppendReply { message_id, status, seq } => {
                b.push(APPEND_REPLY);
                b.extend_from_slice(&message_id.0);
                b.push(*status as u8);
                b.extend_from_slice(&seq.to_le_bytes());
            }
        }
        let len = (b.len() - 4) as u32;
        b[..4].copy_from_slice(&len.to_le_bytes());
        b
    }

    /// Decodes exactly one frame occupying all of `b`.
    pub fn decode(b: &[u8]) -> Result<Frame, FrameError> {
        let mut r = Reader { b, pos: 0 };
        let declared = r.u32()? as usize;
        if declared != b.len() - 4 {
            return Err(FrameError::LengthMismatch { declared, actual: b.len() - 4 });
        }
        let frame = match r.u8()? {
            SIZE_REQUEST => Frame::SizeRequest { request_id: r.u64()?, log_name: r.name()? },
            SIZE_REPLY => Frame::SizeReply { request_id: r.u64()?, status: r.status()?, element_size: r.u32()? },
            APPEND_REQUEST => {
                let message_id = r.id()?;
                let element_size = r.u32()?;
                let log_name = r.name()?;
                let n = r.u32()? as usize;
                Frame::AppendRequest { message_id, element_size, log_name, payload: r.take(n)?.to_vec() }
            }
            APPEND_REPLY => Frame::AppendReply { message_id: r.id()?, status: r.status()?, seq: r.u64()? },
            t => return Err(FrameError::UnknownType(t)),
        };
        if r.pos != b.len() {
            return Err(FrameError::LengthMismatch { declared, actual: r.pos - 4 });
        }
        Ok(frame)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Frame::SizeRequest { .. } => "size_request",
            Frame::SizeReply { .. } => "size_reply",
            Frame::AppendRequest { .. } => "append_request",
            Frame::AppendReply { .. } => "append_reply",
        }
    }
}

fn put_name(b: &mut Vec<u8>, name: &str) {
    b.extend_from_slice(&(name.len() as u16).to_le_bytes());
    b.extend_from_slice(name.as_bytes());
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        if self.b.len() - self.pos < n {
            return Err(FrameError::Truncated);
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn id(&mut self) -> Result<MessageId, FrameError> {
        Ok(MessageId(self.take(16)?.try_into().unwrap()))
    }
    fn status(&mut self) -> Result<Status, FrameError> {
        let s = self.u8()?;
        Status::from_u8(s).ok_or(FrameError::UnknownStatus(s))
    }
    fn name(&mut self) -> Result<String, FrameError> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| FrameError::BadName)
    }
}
