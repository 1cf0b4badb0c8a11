//! Wire frames of the anti-entropy protocol.
//!
//! Every frame is `type: u8 | length: u32 BE | body`. Bodies:
//!
//! | type | frame   | body                                             |
//! |------|---------|--------------------------------------------------|
//! | 1    | HELLO   | version u8, node id utf-8                        |
//! | 2    | VECTOR  | count u32, then count × (id 32 bytes, size u64)  |
//! | 3    | REQUEST | count u32, then count × id 32 bytes              |
//! | 4    | DATA    | canonical message encoding                       |
//! | 5    | BYE     | empty                                            |

use std::io::{self, Read, Write};

use thiserror::Error;

use super::SummaryVector;
use crate::message::MessageId;

pub const PROTOCOL_VERSION: u8 = 1;
/// Largest frame body accepted by the decoder.
pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;
pub const HEADER_LEN: usize = 5;

const T_HELLO: u8 = 1;
const T_VECTOR: u8 = 2;
const T_REQUEST: u8 = 3;
const T_DATA: u8 = 4;
const T_BYE: u8 = 5;

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Frame {
    Hello { version: u8, node_id: String },
    Vector(SummaryVector),
    Request(Vec<MessageId>),
    Data(Vec<u8>),
    Bye,
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("unknown frame type {0}")]
    UnknownType(u8),
    #[error("frame body of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("truncated frame")]
    Truncated,
    #[error("malformed {0} frame")]
    Malformed(&'static str),
    #[error("summary vector not strictly sorted by id")]
    UnsortedVector,
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl Frame {
    pub fn name(&self) -> &'static str {
        match self {
            Frame::Hello { .. } => "HELLO",
            Frame::Vector(_) => "VECTOR",
            Frame::Request(_) => "REQUEST",
            Frame::Data(_) => "DATA",
            Frame::Bye => "BYE",
        }
    }

    fn type_byte(&self) -> u8 {
        match self {
            Frame::Hello { .. } => T_HELLO,
            Frame::Vector(_) => T_VECTOR,
            Frame::Request(_) => T_REQUEST,
            Frame::Data(_) => T_DATA,
            Frame::Bye => T_BYE,
        }
    }

    fn body_len(&self) -> usize {
        match self {
            Frame::Hello { node_id, .. } => 1 + node_id.len(),
            Frame::Vector(v) => 4 + v.len() * 40,
            Frame::Request(ids) => 4 + ids.len() * 32,
            Frame::Data(bytes) => bytes.len(),
            Frame::Bye => 0,
        }
    }

    /// Total encoded size including the header.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.body_len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.type_byte());
        out.extend_from_slice(&(self.body_len() as u32).to_be_bytes());
        match self {
            Frame::Hello { version, node_id } => {
                out.push(*version);
                out.extend_from_slice(node_id.as_bytes());
            }
            Frame::Vector(v) => {
                out.extend_from_slice(&(v.len() as u32).to_be_bytes());
                for (id, size) in v.entries() {
                    out.extend_from_slice(id.as_bytes());
                    out.extend_from_slice(&size.to_be_bytes());
                }
            }
            Frame::Request(ids) => {
                out.extend_from_slice(&(ids.len() as u32).to_be_bytes());
                for id in ids {
                    out.extend_from_slice(id.as_bytes());
                }
            }
            Frame::Data(bytes) => out.extend_from_slice(bytes),
            Frame::Bye => {}
        }
        out
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Frame, FrameError> {
        if bytes.len() < HEADER_LEN {
            return Err(FrameError::Truncated);
        }
        let (ty, len) = parse_header(bytes[..HEADER_LEN].try_into().unwrap())?;
        let body = &bytes[HEADER_LEN..];
        if body.len() < len {
            return Err(FrameError::Truncated);
        }
        if body.len() > len {
            return Err(FrameError::Malformed("oversized"));
        }
        decode_body(ty, body)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.encode())
    }

    /// Reads one frame. `Ok(None)` on clean end-of-stream before a header.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Frame>, FrameError> {
        let mut header = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            match r.read(&mut header[filled..]) {
                Ok(0) if filled == 0 => return Ok(None),
                Ok(0) => return Err(FrameError::Truncated),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let (ty, len) = parse_header(&header)?;
        // grow as bytes arrive so a lying length cannot force a huge allocation
        let mut body = Vec::with_capacity(len.min(64 * 1024));
        r.take(len as u64).read_to_end(&mut body)?;
        if body.len() < len {
            return Err(FrameError::Truncated);
        }
        decode_body(ty, &body).map(Some)
    }
}

fn parse_header(header: &[u8; HEADER_LEN]) -> Result<(u8, usize), FrameError> {
    let ty = header[0];
    if !(T_HELLO..=T_BYE).contains(&ty) {
        return Err(FrameError::UnknownType(ty));
    }
    let len = u32::from_be_bytes(header[1..].try_into().unwrap()) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(len));
    }
    Ok((ty, len))
}

fn read_id(bytes: &[u8]) -> MessageId {
    MessageId::from_bytes(bytes.try_into().expect("32-byte slice"))
}

fn decode_body(ty: u8, body: &[u8]) -> Result<Frame, FrameError> {
    match ty {
        T_HELLO => {
            let (&version, rest) = body.split_first().ok_or(FrameError::Malformed("HELLO"))?;
            let node_id = std::str::from_utf8(rest).map_err(|_| FrameError::Malformed("HELLO"))?;
            Ok(Frame::Hello { version, node_id: node_id.to_owned() })
        }
        T_VECTOR => {
            let (count, rest) = counted(body, 40, "VECTOR")?;
            let entries: Vec<(MessageId, u64)> = rest
                .chunks_exact(40)
                .take(count)
                .map(|c| (read_id(&c[..32]), u64::from_be_bytes(c[32..].try_into().unwrap())))
                .collect();
            if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(FrameError::UnsortedVector);
            }
            Ok(Frame::Vector(SummaryVector::from_sorted(entries)))
        }
        T_REQUEST => {
            let (count, rest) = counted(body, 32, "REQUEST")?;
            Ok(Frame::Request(rest.chunks_exact(32).take(count).map(read_id).collect()))
        }
        T_DATA => Ok(Frame::Data(body.to_vec())),
        T_BYE if body.is_empty() => Ok(Frame::Bye),
        T_BYE => Err(FrameError::Malformed("BYE")),
        other => Err(FrameError::UnknownType(other)),
    }
}

fn counted<'a>(body: &'a [u8], width: usize, name: &'static str) -> Result<(usize, &'a [u8]), FrameError> {
    if body.len() < 4 {
        return Err(FrameError::Malformed(name));
    }
    let count = u32::from_be_bytes(body[..4].try_into().unwrap()) as usize;
    let rest = &body[4..];
    if count.checked_mul(width) != Some(rest.len()) {
        return Err(FrameError::Malformed(name));
    }
    Ok((count, rest))
}
