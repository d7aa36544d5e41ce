//! Receiver server for XML carried in DAB subchannels.
//!
//! Three threads cooperate over bounded queues: the extractor decodes
//! DABml envelopes from the watched subchannel, the main thread runs
//! behaviours and answers clients, and the hardware thread alone touches the
//! simulated receiver. An HTTP listener forwards client requests to the main
//! thread:
//!
//! - `POST /dabml` takes an envelope and answers with one
//! - `GET /events` returns the event log as text, newest last
//! - `GET /state` returns the receiver state as an envelope

pub mod config;
pub mod events;
pub mod extractor;
pub mod hardware;
mod http;
pub mod server;

pub use config::{InputSource, ServerConfig};
pub use events::{ExtractionErrorKind, ServerEvent, TimedEvent};
pub use extractor::{run_extractor, Clock, SubchannelExtractor};
pub use hardware::{ReceiverState, SimulatedReceiver};
pub use server::{ClientReply, ServerError, ServerHandle, ServerStats, StartOptions};
