//! Byte-level message framing between sites and the coordinator.
//!
//! A frame is a tag byte, the payload length in reals (u64), a metadata word
//! (u64) and the payload as little-endian f64 values. The metadata word
//! carries a row count for gradient and pilot frames and the round number for
//! model broadcasts.

use std::fmt;

use crate::error::{Error, Result};

/// Header size in bytes: tag, payload length, metadata.
pub const HEADER_BYTES: usize = 1 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tag {
    Grad = 1,
    Pilot = 2,
    Model = 3,
}

impl TryFrom<u8> for Tag {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Tag::Grad),
            2 => Ok(Tag::Pilot),
            3 => Ok(Tag::Model),
            other => Err(Error::Codec(format!("unknown tag byte {other}"))),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::Grad => "GRAD",
            Tag::Pilot => "PILOT",
            Tag::Model => "MODEL",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub tag: Tag,
    pub meta: u64,
    pub payload: Vec<f64>,
}

impl Frame {
    pub fn new(tag: Tag, meta: u64, payload: Vec<f64>) -> Self {
        Self { tag, meta, payload }
    }

    /// Size of the encoded frame.
    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES + 8 * self.payload.len()
    }
}

pub fn encode(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.push(frame.tag as u8);
    out.extend_from_slice(&(frame.payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&frame.meta.to_le_bytes());
    for v in &frame.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u64(bytes: &[u8]) -> u64 {
    u64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
}

pub fn decode(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Codec(format!(
            "frame of {} bytes is shorter than its header",
            bytes.len()
        )));
    }
    let tag = Tag::try_from(bytes[0])?;
    let len = read_u64(&bytes[1..9]) as usize;
    let meta = read_u64(&bytes[9..17]);
    let body = &bytes[HEADER_BYTES..];
    if body.len() != len.saturating_mul(8) {
        return Err(Error::Codec(format!(
            "declared {len} reals but body has {} bytes",
            body.len()
        )));
    }
    let payload = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Frame { tag, meta, payload })
}

/// Decodes and checks the tag.
pub fn decode_expect(bytes: &[u8], tag: Tag) -> Result<Frame> {
    let f = decode(bytes)?;
    if f.tag != tag {
        return Err(Error::Codec(format!("expected {tag} frame, got {}", f.tag)));
    }
    Ok(f)
}
