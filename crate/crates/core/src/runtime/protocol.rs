//! Length-prefixed JSON framing. See `docs/wire-protocol.md`.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub const MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    FrameTooLarge(usize),
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("unknown message tag '{0}'")]
    UnknownTag(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRequest {
    pub session: u64,
    pub sequence: u64,
    pub timestamp_ns: i64,
    pub q: Vec<f64>,
    pub obs: Vec<f64>,
    /// Rows of the last received chunk already executed.
    pub executed: usize,
    /// Round trip of the previous request, if any.
    pub latency_ns: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkResponse {
    pub session: u64,
    pub sequence: u64,
    /// Rows of hybrid deltas relative to `reference`.
    pub chunk: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
    pub generated_ns: i64,
    /// Inference delay in control steps the server planned for.
    pub delay: usize,
}

impl ChunkResponse {
    pub fn deltas(&self) -> Result<Array2<f64>, WireError> {
        let cols = self.chunk.first().map_or(0, Vec::len);
        if self.chunk.iter().any(|r| r.len() != cols) {
            return Err(WireError::MalformedJson("ragged chunk rows".into()));
        }
        Array2::from_shape_vec((self.chunk.len(), cols), self.chunk.concat())
            .map_err(|e| WireError::MalformedJson(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    Start,
    Pause,
    Stop,
    Ping,
    Pong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorMessage {
    pub code: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Observation(ObservationRequest),
    Chunk(ChunkResponse),
    Control(Control),
    Error(ErrorMessage),
}

impl WireMessage {
    pub fn error(code: &str, text: impl Into<String>) -> Self {
        Self::Error(ErrorMessage {
            code: code.to_string(),
            text: text.into(),
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
enum Repr {
    Observation(ObservationRequest),
    Chunk(ChunkResponse),
    Start,
    Pause,
    Stop,
    Ping,
    Pong,
    Error(ErrorMessage),
}

const TAGS: [&str; 8] = ["observation", "chunk", "start", "pause", "stop", "ping", "pong", "error"];

impl From<&WireMessage> for Repr {
    fn from(m: &WireMessage) -> Self {
        match m {
            WireMessage::Observation(o) => Repr::Observation(o.clone()),
            WireMessage::Chunk(c) => Repr::Chunk(c.clone()),
            WireMessage::Control(Control::Start) => Repr::Start,
            WireMessage::Control(Control::Pause) => Repr::Pause,
            WireMessage::Control(Control::Stop) => Repr::Stop,
            WireMessage::Control(Control::Ping) => Repr::Ping,
            WireMessage::Control(Control::Pong) => Repr::Pong,
            WireMessage::Error(e) => Repr::Error(e.clone()),
        }
    }
}

impl From<Repr> for WireMessage {
    fn from(r: Repr) -> Self {
        match r {
            Repr::Observation(o) => Self::Observation(o),
            Repr::Chunk(c) => Self::Chunk(c),
            Repr::Start => Self::Control(Control::Start),
            Repr::Pause => Self::Control(Control::Pause),
            Repr::Stop => Self::Control(Control::Stop),
            Repr::Ping => Self::Control(Control::Ping),
            Repr::Pong => Self::Control(Control::Pong),
            Repr::Error(e) => Self::Error(e),
        }
    }
}

fn check_finite(m: &WireMessage) -> Result<(), WireError> {
    let ok = |v: &[f64]| v.iter().all(|x| x.is_finite());
    match m {
        WireMessage::Observation(o) if !(ok(&o.q) && ok(&o.obs)) => Err(WireError::NonFinite("observation")),
        WireMessage::Chunk(c) if !(ok(&c.reference) && c.chunk.iter().all(|r| ok(r))) => {
            Err(WireError::NonFinite("chunk"))
        }
        _ => Ok(()),
    }
}

/// JSON payload without the length prefix.
pub fn encode_payload(m: &WireMessage) -> Result<Vec<u8>, WireError> {
    check_finite(m)?;
    serde_json::to_vec(&Repr::from(m)).map_err(|e| WireError::MalformedJson(e.to_string()))
}

pub fn decode_payload(payload: &[u8]) -> Result<WireMessage, WireError> {
    let value: serde_json::Value =
        serde_json::from_slice(payload).map_err(|e| WireError::MalformedJson(e.to_string()))?;
    match value.get("t") {
        Some(serde_json::Value::String(t)) if TAGS.contains(&t.as_str()) => {}
        Some(serde_json::Value::String(t)) => return Err(WireError::UnknownTag(t.clone())),
        Some(other) => return Err(WireError::UnknownTag(other.to_string())),
        None => return Err(WireError::MalformedJson("missing tag \"t\"".into())),
    }
    serde_json::from_value::<Repr>(value)
        .map(Into::into)
        .map_err(|e| WireError::MalformedJson(e.to_string()))
}

/// Big-endian `u32` payload length followed by the payload.
pub fn encode_message(m: &WireMessage) -> Result<Vec<u8>, WireError> {
    let payload = encode_payload(m)?;
    if payload.len() > MAX_FRAME {
        return Err(WireError::FrameTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes one complete frame; trailing bytes are an error.
pub fn decode_message(frame: &[u8]) -> Result<WireMessage, WireError> {
    let Some((len, payload)) = frame.split_first_chunk::<4>() else {
        return Err(WireError::MalformedJson("frame shorter than its length prefix".into()));
    };
    let len = u32::from_be_bytes(*len) as usize;
    if len > MAX_FRAME {
        return Err(WireError::FrameTooLarge(len));
    }
    if payload.len() != len {
        return Err(WireError::MalformedJson(format!(
            "prefix says {len} bytes, frame carries {}",
            payload.len()
        )));
    }
    decode_payload(payload)
}

pub fn write_message<W: Write>(out: &mut W, m: &WireMessage) -> Result<(), WireError> {
    out.write_all(&encode_message(m)?)?;
    out.flush()?;
    Ok(())
}

/// Reads one frame. A clean end of stream before the prefix yields `Ok(None)`.
pub fn read_message<R: Read>(input: &mut R) -> Result<Option<WireMessage>, WireError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match input.read(&mut len[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(std::io::Error::from(std::io::ErrorKind::UnexpectedEof).into()),
            n => got += n,
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut payload = vec![0u8; len];
    input.read_exact(&mut payload)?;
    decode_payload(&payload).map(Some)
}
