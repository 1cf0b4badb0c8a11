//! Length-prefixed binary encoding of messages.
//!
//! ```text
//! "OWM1" | version u8
//! service:     u32 len | utf-8
//! originator:  u32 len | utf-8
//! created_at:  u32 len (=8) | u64
//! ttl_seconds: u32 len (=8) | u64
//! metadata:    u32 count | { key: u32 len | utf-8, tag u8, value: u32 len | bytes }*  (sorted by key)
//! payload:     u32 count | { name: u32 len | utf-8, data: u32 len | bytes }*          (list order)
//! ---- end of canonical body ----
//! signature:   u8 present | [u32 len | bytes]
//! ```
//!
//! All integers are big-endian. Metadata value tags: 0 text, 1 bytes,
//! 2 payload reference.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{Message, MessageBuilder, MessageError, MetaValue, PayloadEntry};

pub const MAGIC: &[u8; 4] = b"OWM1";
pub const FORMAT_VERSION: u8 = 0x01;
/// Largest encodable field, in bytes.
pub const MAX_FIELD_LEN: usize = (1 << 31) - 1;

const TAG_TEXT: u8 = 0;
const TAG_BYTES: u8 = 1;
const TAG_REF: u8 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic, not a message")]
    BadMagic,
    #[error("unsupported format version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("truncated input: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("length {0} exceeds field limit")]
    FieldTooLarge(u64),
    #[error("field {0} is not valid utf-8")]
    InvalidUtf8(&'static str),
    #[error("integer field {0} must be 8 bytes")]
    BadIntegerWidth(&'static str),
    #[error("unknown metadata value tag {0}")]
    UnknownTag(u8),
    #[error("metadata keys out of canonical order or duplicated at {0:?}")]
    NonCanonicalKeys(String),
    #[error("invalid signature flag {0}")]
    BadSignatureFlag(u8),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("invalid message: {0}")]
    Invalid(#[from] MessageError),
}

fn put_len(out: &mut Vec<u8>, len: usize) {
    debug_assert!(len <= MAX_FIELD_LEN);
    out.extend_from_slice(&(len as u32).to_be_bytes());
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    put_len(out, bytes.len());
    out.extend_from_slice(bytes);
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    put_len(out, 8);
    out.extend_from_slice(&v.to_be_bytes());
}

fn body_len(msg: &Message) -> usize {
    let meta: usize = msg
        .metadata
        .iter()
        .map(|(k, v)| {
            let vlen = match v {
                MetaValue::Text(s) => s.len(),
                MetaValue::Bytes(b) => b.len(),
                MetaValue::PayloadRef(n) => n.len(),
            };
            4 + k.len() + 1 + 4 + vlen
        })
        .sum();
    let payload: usize = msg.payload.iter().map(|p| 8 + p.name.len() + p.data.len()).sum();
    5 + 4 + msg.service.len() + 4 + msg.originator.len() + 12 + 12 + 4 + meta + 4 + payload
}

pub(super) fn encoded_len(msg: &Message) -> usize {
    body_len(msg) + 1 + msg.signature.as_ref().map_or(0, |s| 4 + s.len())
}

pub(super) fn encode_body(msg: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(msg));
    write_body(msg, &mut out);
    out
}

fn write_body(msg: &Message, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    put_bytes(out, msg.service.as_bytes());
    put_bytes(out, msg.originator.as_bytes());
    put_u64(out, msg.created_at);
    put_u64(out, msg.ttl_seconds);
    // BTreeMap iteration is already lexicographic by key bytes.
    put_len(out, msg.metadata.len());
    for (key, value) in &msg.metadata {
        put_bytes(out, key.as_bytes());
        match value {
            MetaValue::Text(s) => {
                out.push(TAG_TEXT);
                put_bytes(out, s.as_bytes());
            }
            MetaValue::Bytes(b) => {
                out.push(TAG_BYTES);
                put_bytes(out, b);
            }
            MetaValue::PayloadRef(name) => {
                out.push(TAG_REF);
                put_bytes(out, name.as_bytes());
            }
        }
    }
    put_len(out, msg.payload.len());
    for entry in &msg.payload {
        put_bytes(out, entry.name.as_bytes());
        put_bytes(out, &entry.data);
    }
}

pub(super) fn encode_canonical(msg: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(msg));
    write_body(msg, &mut out);
    match &msg.signature {
        None => out.push(0),
        Some(sig) => {
            out.push(1);
            put_bytes(&mut out, sig);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(DecodeError::Truncated { offset: self.pos, needed: n });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, DecodeError> {
        let len = self.u32()?;
        if len as usize > MAX_FIELD_LEN {
            return Err(DecodeError::FieldTooLarge(len as u64));
        }
        Ok(len as usize)
    }

    fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.len()?;
        self.take(len)
    }

    fn string(&mut self, field: &'static str) -> Result<String, DecodeError> {
        let raw = self.bytes()?;
        std::str::from_utf8(raw).map(str::to_owned).map_err(|_| DecodeError::InvalidUtf8(field))
    }

    fn u64_field(&mut self, field: &'static str) -> Result<u64, DecodeError> {
        if self.len()? != 8 {
            return Err(DecodeError::BadIntegerWidth(field));
        }
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Count of following entries. Each entry needs at least `min_entry`
    /// bytes, which bounds allocations on corrupted input.
    fn count(&mut self, min_entry: usize) -> Result<usize, DecodeError> {
        let count = self.u32()? as usize;
        let remaining = self.buf.len() - self.pos;
        if count.saturating_mul(min_entry) > remaining {
            return Err(DecodeError::Truncated { offset: self.pos, needed: count * min_entry });
        }
        Ok(count)
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| DecodeError::BadMagic)? != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    let service = r.string("service")?;
    let originator = r.string("originator")?;
    let created_at = r.u64_field("created_at")?;
    let ttl_seconds = r.u64_field("ttl_seconds")?;

    let meta_count = r.count(9)?;
    let mut metadata = BTreeMap::new();
    let mut last_key: Option<String> = None;
    for _ in 0..meta_count {
        let key = r.string("metadata key")?;
        if last_key.as_ref().is_some_and(|prev| prev.as_bytes() >= key.as_bytes()) {
            return Err(DecodeError::NonCanonicalKeys(key));
        }
        let value = match r.u8()? {
            TAG_TEXT => MetaValue::Text(r.string("metadata value")?),
            TAG_BYTES => MetaValue::Bytes(r.bytes()?.to_vec()),
            TAG_REF => MetaValue::PayloadRef(r.string("payload reference")?),
            tag => return Err(DecodeError::UnknownTag(tag)),
        };
        last_key = Some(key.clone());
        metadata.insert(key, value);
    }

    let payload_count = r.count(8)?;
    let mut payload = Vec::with_capacity(payload_count);
    for _ in 0..payload_count {
        let name = r.string("payload name")?;
        let data = r.bytes()?.to_vec();
        payload.push(PayloadEntry { name, data });
    }

    let signature = match r.u8()? {
        0 => None,
        1 => Some(r.bytes()?.to_vec()),
        flag => return Err(DecodeError::BadSignatureFlag(flag)),
    };
    let trailing = bytes.len() - r.pos;
    if trailing != 0 {
        return Err(DecodeError::TrailingBytes(trailing));
    }

    let mut builder = MessageBuilder {
        service,
        originator,
        created_at,
        ttl_seconds,
        metadata,
        payload,
        signature: None,
    };
    if let Some(sig) = signature {
        builder = builder.signature(sig);
    }
    Ok(builder.build()?)
}
