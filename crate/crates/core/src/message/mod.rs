//! The canonical self-contained message.
//!
//! A message bundles application data (payload blobs) with key-value
//! metadata, including the transformation scripts that present it and
//! respond to it. Messages are immutable once built and are named by the
//! SHA-256 digest of their canonical body.

mod codec;
mod metadata;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use codec::{DecodeError, FORMAT_VERSION, MAGIC, MAX_FIELD_LEN};
pub use metadata::{
    ContentType, MetadataWarning, ScriptKind, TransformationScript, RESERVED_KEYS,
};

/// Default message lifetime in seconds.
pub const DEFAULT_TTL: u64 = 5400;

/// Metadata key naming the application a message belongs to.
pub const KEY_SERVICE: &str = "service";
pub const KEY_CONTENT_TYPE: &str = "contentType";
pub const KEY_DESCRIPTION: &str = "description";
pub const KEY_ICON: &str = "icon";
pub const KEY_SYSTEM: &str = "system";

/// 32-byte content digest naming a message.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MessageId([u8; 32]);

impl MessageId {
    pub const LEN: usize = 32;

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Digest of arbitrary bytes, used for the canonical body.
    pub(crate) fn digest(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MessageId({})", &self.to_hex()[..12])
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid message id {0:?}: expected 64 lowercase hex characters")]
pub struct IdParseError(pub String);

impl FromStr for MessageId {
    type Err = IdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64 || s.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(IdParseError(s.to_owned()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| IdParseError(s.to_owned()))?;
        Ok(Self(out))
    }
}

impl Serialize for MessageId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for MessageId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A metadata value: inline text, inline bytes, or a reference to a payload
/// entry by name.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum MetaValue {
    Text(String),
    Bytes(Vec<u8>),
    PayloadRef(String),
}

impl MetaValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            MetaValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl From<&str> for MetaValue {
    fn from(s: &str) -> Self {
        MetaValue::Text(s.to_owned())
    }
}

impl From<String> for MetaValue {
    fn from(s: String) -> Self {
        MetaValue::Text(s)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PayloadEntry {
    pub name: String,
    pub data: Vec<u8>,
}

/// Violations of the message invariants, reported when building.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum MessageError {
    #[error("duplicate payload name {0:?}")]
    DuplicatePayloadName(String),
    #[error("metadata key {key:?} references missing payload {name:?}")]
    UnresolvedPayloadRef { key: String, name: String },
    #[error("service metadata {meta:?} does not match service field {field:?}")]
    ServiceMismatch { field: String, meta: String },
    #[error("transformation {0} must be non-empty text")]
    InvalidScript(ScriptKind),
    #[error("field {field} is {len} bytes, limit is {MAX_FIELD_LEN}")]
    FieldTooLarge { field: &'static str, len: usize },
}

/// An immutable, content-addressed message.
#[derive(Clone, PartialEq, Eq)]
pub struct Message {
    id: MessageId,
    service: String,
    originator: String,
    created_at: u64,
    ttl_seconds: u64,
    metadata: BTreeMap<String, MetaValue>,
    payload: Vec<PayloadEntry>,
    signature: Option<Vec<u8>>,
}

impl fmt::Debug for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Message")
            .field("id", &self.id)
            .field("service", &self.service)
            .field("created_at", &self.created_at)
            .field("metadata_keys", &self.metadata.keys().collect::<Vec<_>>())
            .field("payload", &self.payload.iter().map(|p| (&p.name, p.data.len())).collect::<Vec<_>>())
            .field("signed", &self.signature.is_some())
            .finish()
    }
}

impl Message {
    pub fn builder(service: impl Into<String>) -> MessageBuilder {
        MessageBuilder::new(service)
    }

    pub fn id(&self) -> MessageId {
        self.id
    }

    pub fn service(&self) -> &str {
        &self.service
    }

    pub fn originator(&self) -> &str {
        &self.originator
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }

    pub fn ttl_seconds(&self) -> u64 {
        self.ttl_seconds
    }

    pub fn metadata(&self) -> &BTreeMap<String, MetaValue> {
        &self.metadata
    }

    pub fn meta(&self, key: &str) -> Option<&MetaValue> {
        self.metadata.get(key)
    }

    pub fn meta_text(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).and_then(MetaValue::as_text)
    }

    /// Resolves a metadata value to bytes, following payload references.
    pub fn meta_bytes(&self, key: &str) -> Option<&[u8]> {
        match self.metadata.get(key)? {
            MetaValue::Text(s) => Some(s.as_bytes()),
            MetaValue::Bytes(b) => Some(b),
            MetaValue::PayloadRef(name) => self.payload_data(name),
        }
    }

    pub fn payload(&self) -> &[PayloadEntry] {
        &self.payload
    }

    pub fn payload_data(&self, name: &str) -> Option<&[u8]> {
        self.payload.iter().find(|p| p.name == name).map(|p| p.data.as_slice())
    }

    pub fn signature(&self) -> Option<&[u8]> {
        self.signature.as_deref()
    }

    pub fn script(&self, kind: ScriptKind) -> Option<TransformationScript> {
        let source = self.meta_text(kind.key())?;
        TransformationScript::new(kind, source).ok()
    }

    pub fn content_type(&self) -> ContentType {
        self.meta_text(KEY_CONTENT_TYPE).map(ContentType::parse).unwrap_or(ContentType::Other)
    }

    /// Last instant (inclusive) at which the message is still live.
    pub fn expires_at(&self) -> u64 {
        self.created_at.saturating_add(self.ttl_seconds)
    }

    pub fn is_expired(&self, now: u64) -> bool {
        now > self.expires_at()
    }

    /// Canonical body: every field except the id and the signature. This
    /// is what the id digests and what signatures cover.
    pub fn encode_body(&self) -> Vec<u8> {
        codec::encode_body(self)
    }

    /// Full wire encoding: canonical body followed by the signature slot.
    pub fn encode_canonical(&self) -> Vec<u8> {
        codec::encode_canonical(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
        codec::decode(bytes)
    }

    /// Size of the full wire encoding in bytes.
    pub fn encoded_len(&self) -> usize {
        codec::encoded_len(self)
    }

    pub fn validate_metadata(&self) -> Vec<MetadataWarning> {
        metadata::validate(self)
    }

    /// Returns a builder pre-filled with this message's content, without
    /// the signature.
    pub fn to_builder(&self) -> MessageBuilder {
        MessageBuilder {
            service: self.service.clone(),
            originator: self.originator.clone(),
            created_at: self.created_at,
            ttl_seconds: self.ttl_seconds,
            metadata: self.metadata.clone(),
            payload: self.payload.clone(),
            signature: None,
        }
    }

    pub fn with_signature(&self, signature: Vec<u8>) -> Message {
        Message { signature: Some(signature), ..self.clone() }
    }


    /// Human-readable JSON rendering for debugging; not canonical.
    pub fn to_debug_json(&self) -> serde_json::Value {
        use serde_json::json;
        let metadata: serde_json::Map<String, serde_json::Value> = self
            .metadata
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    MetaValue::Text(s) => json!({ "text": s }),
                    MetaValue::Bytes(b) => json!({ "bytes": b.len(), "hex_prefix": hex::encode(&b[..b.len().min(16)]) }),
                    MetaValue::PayloadRef(n) => json!({ "payload_ref": n }),
                };
                (k.clone(), v)
            })
            .collect();
        let payload: Vec<_> = self
            .payload
            .iter()
            .map(|p| json!({ "name": p.name, "bytes": p.data.len() }))
            .collect();
        json!({
            "id": self.id.to_hex(),
            "service": self.service,
            "originator": self.originator,
            "created_at": self.created_at,
            "ttl_seconds": self.ttl_seconds,
            "metadata": metadata,
            "payload": payload,
            "signature": self.signature.as_ref().map(hex::encode),
            "encoded_len": self.encoded_len(),
        })
    }
}

/// Assembles a [`Message`], checking its invariants in [`MessageBuilder::build`].
#[derive(Clone, Debug)]
pub struct MessageBuilder {
    service: String,
    originator: String,
    created_at: u64,
    ttl_seconds: u64,
    metadata: BTreeMap<String, MetaValue>,
    payload: Vec<PayloadEntry>,
    signature: Option<Vec<u8>>,
}

impl MessageBuilder {
    pub fn new(service: impl Into<String>) -> Self {
        Self {
            service: service.into(),
            originator: String::new(),
            created_at: 0,
            ttl_seconds: DEFAULT_TTL,
            metadata: BTreeMap::new(),
            payload: Vec::new(),
            signature: None,
        }
    }

    pub fn service(mut self, service: impl Into<String>) -> Self {
        self.service = service.into();
        self
    }

    pub fn originator(mut self, originator: impl Into<String>) -> Self {
        self.originator = originator.into();
        self
    }

    pub fn created_at(mut self, created_at: u64) -> Self {
        self.created_at = created_at;
        self
    }

    pub fn ttl(mut self, ttl_seconds: u64) -> Self {
        self.ttl_seconds = ttl_seconds;
        self
    }

    pub fn meta(mut self, key: impl Into<String>, value: impl Into<MetaValue>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn remove_meta(mut self, key: &str) -> Self {
        self.metadata.remove(key);
        self
    }

    pub fn script(self, kind: ScriptKind, source: impl Into<String>) -> Self {
        self.meta(kind.key(), MetaValue::Text(source.into()))
    }

    /// Appends a payload entry, replacing an existing entry of the same name.
    pub fn payload(mut self, name: impl Into<String>, data: impl Into<Vec<u8>>) -> Self {
        let name = name.into();
        let data = data.into();
        match self.payload.iter_mut().find(|p| p.name == name) {
            Some(entry) => entry.data = data,
            None => self.payload.push(PayloadEntry { name, data }),
        }
        self
    }

    pub fn payload_entries(mut self, entries: Vec<PayloadEntry>) -> Self {
        self.payload = entries;
        self
    }

    pub fn signature(mut self, signature: Vec<u8>) -> Self {
        self.signature = Some(signature);
        self
    }

    pub fn build(self) -> Result<Message, MessageError> {
        check_len("service", self.service.len())?;
        check_len("originator", self.originator.len())?;
        for (i, entry) in self.payload.iter().enumerate() {
            check_len("payload name", entry.name.len())?;
            check_len("payload data", entry.data.len())?;
            if self.payload[..i].iter().any(|p| p.name == entry.name) {
                return Err(MessageError::DuplicatePayloadName(entry.name.clone()));
            }
        }
        for (key, value) in &self.metadata {
            check_len("metadata key", key.len())?;
            match value {
                MetaValue::Text(s) => check_len("metadata value", s.len())?,
                MetaValue::Bytes(b) => check_len("metadata value", b.len())?,
                MetaValue::PayloadRef(name) => {
                    if !self.payload.iter().any(|p| &p.name == name) {
                        return Err(MessageError::UnresolvedPayloadRef {
                            key: key.clone(),
                            name: name.clone(),
                        });
                    }
                }
            }
            if let Some(kind) = ScriptKind::from_key(key) {
                if !matches!(value, MetaValue::Text(s) if !s.trim().is_empty()) {
                    return Err(MessageError::InvalidScript(kind));
                }
            }
        }
        if let Some(value) = self.metadata.get(KEY_SERVICE) {
            if value.as_text() != Some(self.service.as_str()) {
                let meta = match value {
                    MetaValue::Text(s) => s.clone(),
                    other => format!("{other:?}"),
                };
                return Err(MessageError::ServiceMismatch { field: self.service, meta });
            }
        }
        if let Some(sig) = &self.signature {
            check_len("signature", sig.len())?;
        }
        let mut msg = Message {
            id: MessageId([0; 32]),
            service: self.service,
            originator: self.originator,
            created_at: self.created_at,
            ttl_seconds: self.ttl_seconds,
            metadata: self.metadata,
            payload: self.payload,
            signature: self.signature,
        };
        msg.id = MessageId::digest(&codec::encode_body(&msg));
        Ok(msg)
    }
}

pub(crate) fn check_len(field: &'static str, len: usize) -> Result<(), MessageError> {
    if len > MAX_FIELD_LEN {
        Err(MessageError::FieldTooLarge { field, len })
    } else {
        Ok(())
    }
}
