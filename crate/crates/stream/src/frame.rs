//! Wire framing: a 4-byte big-endian payload length followed by a UTF-8 JSON
//! payload `{type, step, seq, body}`.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Result, StreamError};

/// Largest payload accepted from the wire.
pub const MAX_PAYLOAD: usize = 256 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameType {
    Hello,
    StepBegin,
    Geometry,
    Similarity,
    PruneProposal,
    PruneCommand,
    PruneAck,
    StepEnd,
    Bye,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Frame {
    #[serde(rename = "type")]
    pub kind: FrameType,
    pub step: u64,
    pub seq: u64,
    pub body: Box<RawValue>,
}

impl PartialEq for Frame {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.step == other.step
            && self.seq == other.seq
            && self.body.get() == other.body.get()
    }
}

impl Frame {
    pub fn new<B: Serialize>(kind: FrameType, step: u64, seq: u64, body: &B) -> Result<Self> {
        Ok(Frame {
            kind,
            step,
            seq,
            body: raw(body)?,
        })
    }

    /// Decodes the body into a typed message.
    pub fn body<'a, B: Deserialize<'a>>(&'a self) -> Result<B> {
        serde_json::from_str(self.body.get()).map_err(StreamError::from)
    }

    pub fn to_payload(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_payload(payload: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(payload)?)
    }
}

pub(crate) fn raw<B: Serialize>(body: &B) -> Result<Box<RawValue>> {
    Ok(serde_json::value::to_raw_value(body)?)
}

/// Length prefix plus payload.
pub fn encode_payload(payload: &[u8]) -> Result<Vec<u8>> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&n| n as usize <= MAX_PAYLOAD)
        .ok_or(StreamError::Oversized(payload.len()))?;
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    w.write_all(&encode_payload(&frame.to_payload()?)?)?;
    Ok(())
}

/// Reads one frame; `None` on a clean end of stream before any byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len[..1]) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    r.read_exact(&mut len[1..])?;
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_PAYLOAD {
        return Err(StreamError::Oversized(n));
    }
    let mut payload = vec![0; n];
    r.read_exact(&mut payload)?;
    Frame::from_payload(&payload).map(Some)
}

/// Incremental splitter for a byte stream that arrives in arbitrary chunks.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete payload, if the buffer holds one.
    pub fn next_payload(&mut self) -> Result<Option<Vec<u8>>> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let n = u32::from_be_bytes(self.buf[..4].try_into().expect("4 bytes")) as usize;
        if n > MAX_PAYLOAD {
            return Err(StreamError::Oversized(n));
        }
        if self.buf.len() < 4 + n {
            return Ok(None);
        }
        let payload = self.buf[4..4 + n].to_vec();
        self.buf.drain(..4 + n);
        Ok(Some(payload))
    }

    /// Bytes received but not yet returned as a payload.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}
