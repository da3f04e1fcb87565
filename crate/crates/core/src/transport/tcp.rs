//! Blocking socket adapter speaking the same frames as the simulator.

use super::frame::{Frame, Status};
use super::server::handle_request;
use super::TransportError;
use crate::ids::MessageId;
use crate::logstore::LogStore;
use crate::time::SimTime;
use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;

pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Frame> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let n = u32::from_le_bytes(len) as usize;
    let mut buf = vec![0u8; 4 + n];
    buf[..4].copy_from_slice(&len);
    r.read_exact(&mut buf[4..])?;
    Frame::decode(&buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub fn write_frame<W: Write>(w: &mut W, f: &Frame) -> io::Result<()> {
    w.write_all(&f.encode())?;
    w.flush()
}

/// Accepts connections forever, one thread per connection.
pub fn serve(listener: TcpListener, store: Arc<LogStore>) -> io::Result<()> {
    for conn in listener.incoming() {
        let stream = conn?;
        let store = Arc::clone(&store);
        std::thread::spawn(move || {
            let _ = serve_connection(stream, &store);
        });
    }
    Ok(())
}

fn serve_connection(mut stream: TcpStream, store: &LogStore) -> io::Result<()> {
    loop {
        let frame = match read_frame(&mut stream) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        };
        if let Some(h) = handle_request(store, &frame, SimTime::ZERO) {
            write_frame(&mut stream, &h.reply)?;
        }
    }
}

pub struct TcpClient {
    stream: TcpStream,
    cache: Option<HashMap<String, u32>>,
    next_request: u64,
}

impl TcpClient {
    pub fn connect<A: ToSocketAddrs>(addr: A, size_cache: bool) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(TcpClient { stream, cache: size_cache.then(HashMap::new), next_request: 1 })
    }

    pub fn element_size(&mut self, log: &str) -> Result<u32, TransportError> {
        let request_id = self.next_request;
        self.next_request += 1;
        let reply = self.exchange(&Frame::SizeRequest { request_id, log_name: log.into() })?;
        match reply {
            Frame::SizeReply { request_id: r, status: Status::Ok, element_size } if r == request_id => Ok(element_size),
            Frame::SizeReply { status, .. } if status != Status::Ok => Err(TransportError::from_status(status)),
            other => Err(TransportError::Protocol(format!("unexpected {}", other.kind()))),
        }
    }

    pub fn append(&mut self, log: &str, payload: &[u8], message_id: MessageId) -> Result<u64, TransportError> {
        let cached = self.cache.as_ref().and_then(|c| c.get(log).copied());
        let element_size = match cached {
            Some(s) => s,
            None => {
                let s = self.element_size(log)?;
                if let Some(c) = self.cache.as_mut() {
                    c.insert(log.to_string(), s);
                }
                s
            }
        };
        if payload.len() > element_size as usize {
            return Err(TransportError::PayloadTooLarge);
        }
        let req = Frame::AppendRequest { message_id, element_size, log_name: log.into(), payload: payload.to_vec() };
        match self.exchange(&req)? {
            Frame::AppendReply { message_id: m, status: Status::Ok, seq } if m == message_id && seq >= 1 => Ok(seq),
            Frame::AppendReply { status, .. } => {
                if status == Status::SizeMismatch {
                    if let Some(c) = self.cache.as_mut() {
                        c.remove(log);
                    }
                }
                Err(TransportError::from_status(status))
            }
            other => Err(TransportError::Protocol(format!("unexpected {}", other.kind()))),
        }
    }

    fn exchange(&mut self, f: &Frame) -> Result<Frame, TransportError> {
        let io = |e: io::Error| TransportError::RouteUnreachable(e.to_string());
        write_frame(&mut self.stream, f).map_err(io)?;
        read_frame(&mut self.stream).map_err(io)
    }
}
