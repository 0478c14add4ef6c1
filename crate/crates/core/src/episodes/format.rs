//! On-disk episode format: one JSON header line, then length-prefixed
//! little-endian frame records. See `docs/episode-format.md`.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::projection::{CameraModel, FrameAnnotations};

pub const FORMAT_NAME: &str = "hb0-episode";
pub const FORMAT_VERSION: u32 = 1;
const FLAG_ANNOTATIONS: u8 = 1;
const FLAG_INSTRUCTION: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("format version {found} not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("frame {index} is corrupt: {reason}")]
    CorruptFrame { index: usize, reason: String },
    #[error("invalid episode: {0}")]
    Invalid(String),
    #[error("integrity check needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("no reachable target after {0} attempts")]
    UnreachableTarget(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeHeader {
    pub format: String,
    pub version: u32,
    pub embodiment: String,
    pub n_joints: usize,
    /// Structural hash of the kinematic chain the joints refer to.
    pub chain_hash: String,
    pub cameras: Vec<CameraModel<f64>>,
    pub control_period_ns: u64,
    pub task: String,
    #[serde(default)]
    pub task_params: serde_json::Value,
}

impl EpisodeHeader {
    pub fn new(embodiment: &str, n_joints: usize, chain_hash: &str, control_period_ns: u64, task: &str) -> Self {
        Self {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            embodiment: embodiment.to_string(),
            n_joints,
            chain_hash: chain_hash.to_string(),
            cameras: Vec::new(),
            control_period_ns,
            task: task.to_string(),
            task_params: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp_ns: i64,
    pub q: Vec<f64>,
    /// Keypoints per camera per joint.
    pub annotations: Option<FrameAnnotations<f64>>,
    pub instruction: Option<String>,
}

impl Frame {
    pub fn new(timestamp_ns: i64, q: Vec<f64>) -> Self {
        Self {
            timestamp_ns,
            q,
            annotations: None,
            instruction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub header: EpisodeHeader,
    pub frames: Vec<Frame>,
}

impl Episode {
    /// Shape checks required to serialize the episode.
    pub fn check_shape(&self) -> Result<(), EpisodeError> {
        let n_cam = self.header.cameras.len();
        for (i, f) in self.frames.iter().enumerate() {
            if f.q.len() != self.header.n_joints {
                return Err(EpisodeError::Invalid(format!(
                    "frame {i} has {} joints, header says {}",
                    f.q.len(),
                    self.header.n_joints
                )));
            }
            if let Some(a) = &f.annotations {
                if a.len() != n_cam || a.iter().any(|c| c.len() != self.header.n_joints) {
                    return Err(EpisodeError::Invalid(format!(
                        "frame {i} annotations are not {n_cam} cameras x {} joints",
                        self.header.n_joints
                    )));
                }
            }
        }
        Ok(())
    }

    /// Shape checks plus strictly increasing timestamps.
    pub fn validate(&self) -> Result<(), EpisodeError> {
        self.check_shape()?;
        for (i, w) in self.frames.windows(2).enumerate() {
            if w[1].timestamp_ns <= w[0].timestamp_ns {
                return Err(EpisodeError::Invalid(format!("timestamp of frame {} not increasing", i + 1)));
            }
        }
        Ok(())
    }

    pub fn joint_states(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(|f| f.q.clone()).collect()
    }
}

fn encode_frame(f: &Frame, out: &mut Vec<u8>) {
    out.clear();
    out.extend_from_slice(&f.timestamp_ns.to_le_bytes());
    for v in &f.q {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut flags = 0;
    if f.annotations.is_some() {
        flags |= FLAG_ANNOTATIONS;
    }
    if f.instruction.is_some() {
        flags |= FLAG_INSTRUCTION;
    }
    out.push(flags);
    if let Some(a) = &f.annotations {
        for cam in a {
            for kp in cam {
                let (uv, valid) = match kp {
                    Some(uv) => (*uv, 1u8),
                    None => ([0.0, 0.0], 0u8),
                };
                out.extend_from_slice(&uv[0].to_le_bytes());
                out.extend_from_slice(&uv[1].to_le_bytes());
                out.push(valid);
            }
        }
    }
    if let Some(s) = &f.instruction {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
}

pub fn write_episode_to<W: Write>(episode: &Episode, out: W) -> Result<(), EpisodeError> {
    episode.check_shape()?;
    let mut out = BufWriter::new(out);
    let header = serde_json::to_string(&episode.header).map_err(|e| EpisodeError::MalformedHeader(e.to_string()))?;
    out.write_all(header.as_bytes())?;
    out.write_all(b"\n")?;
    let mut buf = Vec::new();
    for f in &episode.frames {
        encode_frame(f, &mut buf);
        out.write_all(&(buf.len() as u32).to_le_bytes())?;
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_episode(path: &Path, episode: &Episode) -> Result<(), EpisodeError> {
    write_episode_to(episode, std::fs::File::create(path)?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    index: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EpisodeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| EpisodeError::CorruptFrame {
            index: self.index,
            reason: "record shorter than its contents".into(),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64, EpisodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u8(&mut self) -> Result<u8, EpisodeError> {
        Ok(self.take(1)?[0])
    }
}

fn decode_frame(buf: &[u8], index: usize, header: &EpisodeHeader) -> Result<Frame, EpisodeError> {
    let mut c = Cursor { buf, pos: 0, index };
    let timestamp_ns = i64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes"));
    let q = (0..header.n_joints).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
    let flags = c.u8()?;
    if flags & !(FLAG_ANNOTATIONS | FLAG_INSTRUCTION) != 0 {
        return Err(EpisodeError::CorruptFrame {
            index,
            reason: format!("unknown flags {flags:#04x}"),
        });
    }
    let annotations = if flags & FLAG_ANNOTATIONS != 0 {
        let mut cams = Vec::with_capacity(header.cameras.len());
        for _ in 0..header.cameras.len() {
            let mut joints = Vec::with_capacity(header.n_joints);
            for _ in 0..header.n_joints {
                let (u, v) = (c.f64()?, c.f64()?);
                joints.push(match c.u8()? {
                    0 => None,
                    1 => Some([u, v]),
                    other => {
                        return Err(EpisodeError::CorruptFrame {
                            index,
                            reason: format!("keypoint valid byte {other}"),
                        })
                    }
                });
            }
            cams.push(joints);
        }
        Some(cams)
    } else {
        None
    };
    let instruction = if flags & FLAG_INSTRUCTION != 0 {
        let n = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes")) as usize;
        let bytes = c.take(n)?;
        Some(String::from_utf8(bytes.to_vec()).map_err(|_| EpisodeError::CorruptFrame {
            index,
            reason: "instruction is not UTF-8".into(),
        })?)
    } else {
        None
    };
    if c.pos != buf.len() {
        return Err(EpisodeError::CorruptFrame {
            index,
            reason: format!("{} trailing bytes", buf.len() - c.pos),
        });
    }
    Ok(Frame {
        timestamp_ns,
        q,
        annotations,
        instruction,
    })
}

pub fn read_episode_from<R: Read>(input: R) -> Result<Episode, EpisodeError> {
    let mut input = BufReader::new(input);
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(EpisodeError::MalformedHeader("missing header line".into()));
    }
    let value: serde_json::Value =
        serde_json::from_slice(&line).map_err(|e| EpisodeError::MalformedHeader(e.to_string()))?;
    if value.get("format").and_then(|v| v.as_str()) != Some(FORMAT_NAME) {
        return Err(EpisodeError::MalformedHeader(format!("not an {FORMAT_NAME} file")));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(EpisodeError::FormatVersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header: EpisodeHeader = serde_json::from_value(value).map_err(|e| EpisodeError::MalformedHeader(e.to_string()))?;
    let mut frames = Vec::new();
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    let mut pos = 0;
    while pos < rest.len() {
        let index = frames.len();
        let Some(len) = rest.get(pos..pos + 4) else {
            return Err(EpisodeError::CorruptFrame {
                index,
                reason: "truncated length prefix".into(),
            });
        };
        let len = u32::from_le_bytes(len.try_into().expect("4 bytes")) as usize;
        pos += 4;
        let Some(body) = rest.get(pos..pos + len) else {
            return Err(EpisodeError::CorruptFrame {
                index,
                reason: format!("record of {len} bytes truncated"),
            });
        };
        frames.push(decode_frame(body, index, &header)?);
        pos += len;
    }
    Ok(Episode { header, frames })
}

pub fn read_episode(path: &Path) -> Result<Episode, EpisodeError> {
    read_episode_from(std::fs::File::open(path)?)
}
