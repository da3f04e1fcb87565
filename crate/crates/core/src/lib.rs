pub mod dataflow;
pub mod events;
pub mod fabric;
pub mod ids;
pub mod logstore;
pub mod netsim;
pub mod pilot;
pub mod pipeline;
pub mod scenario;
pub mod time;
pub mod transport;

pub use ids::{MessageId, NodeId};
pub use logstore::{AppendOutcome, Log, LogEntry, LogError, LogHandle, LogHeader, LogStore, ScanResult};
pub use time::{SimDuration, SimTime};
