use super::frame::{Frame, Status};
use crate::logstore::{LogEntry, LogError, LogStore};
use crate::time::SimTime;

/// Reply to send back plus, for a fresh append, the entry that was written
/// (the caller fires handlers bound to that log).
#[derive(Debug)]
pub struct Handled {
    pub reply: Frame,
    pub appended: Option<(String, LogEntry)>,
}

/// Serves one request frame against a node's logs. Replies are pure
/// functions of log state, so retried requests get identical answers.
/// Returns `None` for frames that are not requests.
pub fn handle_request(store: &LogStore, frame: &Frame, now: SimTime) -> Option<Handled> {
    match frame {
        Frame::SizeRequest { request_id, log_name } => {
            let (status, element_size) = match store.get(log_name) {
                Some(l) => (Status::Ok, l.element_size()),
                None => (Status::UnknownLog, 0),
            };
            Some(Handled { reply: Frame::SizeReply { request_id: *request_id, status, element_size }, appended: None })
        }
        Frame::AppendRequest { message_id, element_size, log_name, payload } => {
            let reply = |status, seq| Frame::AppendReply { message_id: *message_id, status, seq };
            let Some(log) = store.get(log_name) else {
                return Some(Handled { reply: reply(Status::UnknownLog, 0), appended: None });
            };
            // an already-applied message is answered from the dedup index
            // even if the log has since been resized
            if let Some(seq) = log.lookup(message_id) {
                return Some(Handled { reply: reply(Status::Ok, seq), appended: None });
            }
            if *element_size != log.element_size() {
                return Some(Handled { reply: reply(Status::SizeMismatch, 0), appended: None });
            }
            match log.append(payload, *message_id, now) {
                Ok(o) => {
                    let appended = if o.duplicate {
                        None
                    } else {
                        log.read(o.seq).ok().map(|e| (log_name.clone(), e))
                    };
                    Some(Handled { reply: reply(Status::Ok, o.seq), appended })
                }
                Err(LogError::PayloadTooLarge { .. }) => {
                    Some(Handled { reply: reply(Status::PayloadTooLarge, 0), appended: None })
                }
                Err(_) => Some(Handled { reply: reply(Status::StorageFailure, 0), appended: None }),
            }
        }
        _ => None,
    }
}
