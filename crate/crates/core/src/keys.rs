//! Originator identities, key records, and message signatures.
//!
//! Key records travel through the network like any other content: as
//! messages of the `keys` service carrying the public key bytes.

use std::collections::HashMap;
use std::fmt;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::message::{Message, MessageError, MetaValue};

pub const KEYS_SERVICE: &str = "keys";
const META_PUBLIC_KEY: &str = "publicKey";
const META_ALGORITHM: &str = "algorithm";

/// Signature schemes a [`KeyRecord`] may name.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SignatureAlgorithm {
    Ed25519,
}

impl SignatureAlgorithm {
    pub fn tag(self) -> &'static str {
        match self {
            SignatureAlgorithm::Ed25519 => "ed25519",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "ed25519" => Some(SignatureAlgorithm::Ed25519),
            _ => None,
        }
    }

    fn verify(self, public_key: &[u8], body: &[u8], signature: &[u8]) -> bool {
        match self {
            SignatureAlgorithm::Ed25519 => {
                let Ok(key_bytes) = <[u8; 32]>::try_from(public_key) else {
                    return false;
                };
                let Ok(key) = VerifyingKey::from_bytes(&key_bytes) else {
                    return false;
                };
                let Ok(sig) = Signature::from_slice(signature) else {
                    return false;
                };
                key.verify(body, &sig).is_ok()
            }
        }
    }
}

pub fn fingerprint(public_key: &[u8]) -> String {
    hex::encode(Sha256::digest(public_key))
}

/// A signing identity. The originator field of messages it creates is its
/// fingerprint.
#[derive(Clone)]
pub struct Identity {
    key: SigningKey,
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Identity({})", &self.fingerprint()[..16])
    }
}

#[derive(Debug, Error)]
#[error("identity secret must be 32 bytes, got {0}")]
pub struct BadSecret(pub usize);

impl Identity {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self { key: SigningKey::generate(rng) }
    }

    pub fn from_secret(bytes: &[u8]) -> Result<Self, BadSecret> {
        let secret: [u8; 32] = bytes.try_into().map_err(|_| BadSecret(bytes.len()))?;
        Ok(Self { key: SigningKey::from_bytes(&secret) })
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.key.to_bytes()
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.key.verifying_key().to_bytes()
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.public_key())
    }

    pub fn key_record(&self) -> KeyRecord {
        KeyRecord {
            fingerprint: self.fingerprint(),
            public_key: self.public_key().to_vec(),
            algorithm: SignatureAlgorithm::Ed25519.tag().to_owned(),
        }
    }

    /// Signs the canonical body of `msg`.
    pub fn sign(&self, msg: &Message) -> Message {
        let sig = self.key.sign(&msg.encode_body());
        msg.with_signature(sig.to_bytes().to_vec())
    }
}

pub fn sign_message(msg: &Message, identity: &Identity) -> Message {
    identity.sign(msg)
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct KeyRecord {
    pub fingerprint: String,
    pub public_key: Vec<u8>,
    pub algorithm: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyRecordError {
    #[error("message is not a key record")]
    NotAKeyRecord,
    #[error("fingerprint {claimed} does not match public key digest {actual}")]
    FingerprintMismatch { claimed: String, actual: String },
}

impl KeyRecord {
    pub fn is_consistent(&self) -> bool {
        fingerprint(&self.public_key) == self.fingerprint
    }

    /// Wraps the record as a self-signed `keys` service message.
    pub fn to_message(identity: &Identity, now: u64, ttl: u64) -> Result<Message, MessageError> {
        let record = identity.key_record();
        let msg = Message::builder(KEYS_SERVICE)
            .originator(record.fingerprint.clone())
            .created_at(now)
            .ttl(ttl)
            .meta(META_PUBLIC_KEY, MetaValue::Bytes(record.public_key))
            .meta(META_ALGORITHM, record.algorithm)
            .meta("contentType", "other")
            .meta("description", format!("public key {}", record.fingerprint))
            .build()?;
        Ok(identity.sign(&msg))
    }

    pub fn from_message(msg: &Message) -> Result<KeyRecord, KeyRecordError> {
        if msg.service() != KEYS_SERVICE {
            return Err(KeyRecordError::NotAKeyRecord);
        }
        let Some(MetaValue::Bytes(public_key)) = msg.meta(META_PUBLIC_KEY) else {
            return Err(KeyRecordError::NotAKeyRecord);
        };
        let algorithm = msg.meta_text(META_ALGORITHM).ok_or(KeyRecordError::NotAKeyRecord)?;
        let actual = fingerprint(public_key);
        if actual != msg.originator() {
            return Err(KeyRecordError::FingerprintMismatch {
                claimed: msg.originator().to_owned(),
                actual,
            });
        }
        Ok(KeyRecord {
            fingerprint: actual,
            public_key: public_key.clone(),
            algorithm: algorithm.to_owned(),
        })
    }
}

/// Known key records, indexed by fingerprint.
#[derive(Clone, Default, Debug)]
pub struct KeySet {
    records: HashMap<String, KeyRecord>,
}

impl KeySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a record; records whose fingerprint does not match their
    /// public key are ignored.
    pub fn insert(&mut self, record: KeyRecord) -> bool {
        if !record.is_consistent() {
            return false;
        }
        self.records.insert(record.fingerprint.clone(), record);
        true
    }

    pub fn get(&self, fingerprint: &str) -> Option<&KeyRecord> {
        self.records.get(fingerprint)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl FromIterator<KeyRecord> for KeySet {
    fn from_iter<T: IntoIterator<Item = KeyRecord>>(iter: T) -> Self {
        let mut set = KeySet::new();
        for r in iter {
            set.insert(r);
        }
        set
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VerifyOutcome {
    Verified,
    UnknownOriginator,
    BadSignature,
}

pub fn verify_message(msg: &Message, keys: &KeySet) -> VerifyOutcome {
    let Some(record) = keys.get(msg.originator()) else {
        return VerifyOutcome::UnknownOriginator;
    };
    let Some(sig) = msg.signature() else {
        return VerifyOutcome::BadSignature;
    };
    let Some(alg) = SignatureAlgorithm::from_tag(&record.algorithm) else {
        return VerifyOutcome::BadSignature;
    };
    if alg.verify(&record.public_key, &msg.encode_body(), sig) {
        VerifyOutcome::Verified
    } else {
        VerifyOutcome::BadSignature
    }
}
