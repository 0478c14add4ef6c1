//! Inference server and robot clients: framed JSON over TCP, per-session
//! latency tracking and previous-chunk feedback.

mod client;
mod executor;
mod protocol;
mod server;
mod session;

pub use client::{client_async, client_sync, run_client, ClientConfig};
pub use executor::{ChunkExecutor, ExecutionMode, ExecutorStats, Switch};
pub use protocol::{
    decode_message, decode_payload, encode_message, encode_payload, read_message, write_message, ChunkResponse, Control,
    ErrorMessage, ObservationRequest, WireError, WireMessage, MAX_FRAME,
};
pub use server::{Server, ServerHandle};
pub use session::{InferenceSession, Policy, ServerConfig, SessionState};

use crate::embodiment::EmbodimentError;
use crate::simplertc::RtcError;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("no response within {0:?}")]
    Timeout(std::time::Duration),
    #[error("server error {code}: {text}")]
    Server { code: String, text: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Rtc(#[from] RtcError),
    #[error(transparent)]
    Embodiment(#[from] EmbodimentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
