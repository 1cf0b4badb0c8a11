//! Sans-I/O anti-entropy session state machine.
//!
//! Each side sends, in order: HELLO, VECTOR, REQUEST (ids it lacks), then
//! DATA for every id the peer requested, then BYE. Both directions run
//! concurrently; a session is done once a side has sent its BYE and
//! received the peer's.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::Serialize;

use super::frame::{Frame, PROTOCOL_VERSION};
use crate::cache::{CacheStore, InsertOutcome};
use crate::message::MessageId;

/// Order in which requested messages are sent.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum TransferOrder {
    /// Oldest `created_at` first, id as tie-break.
    #[default]
    OldestFirst,
    /// Seeded shuffle.
    Random(u64),
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub node_id: String,
    pub order: TransferOrder,
    pub version: u8,
}

impl SessionConfig {
    pub fn new(node_id: impl Into<String>) -> Self {
        Self { node_id: node_id.into(), order: TransferOrder::OldestFirst, version: PROTOCOL_VERSION }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Hello,
    Vector,
    Transfer,
    Done,
    Aborted,
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionReport {
    pub peer: Option<String>,
    pub phase: Phase,
    pub abort_reason: Option<String>,
    pub sent: Vec<MessageId>,
    pub received: Vec<MessageId>,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub duplicate_data_frames: u64,
    pub rejected_data_frames: u64,
}

impl SessionReport {
    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }
}

pub struct SyncSession {
    cache: CacheStore,
    now: u64,
    config: SessionConfig,
    phase: Phase,
    peer: Option<String>,
    requested: BTreeSet<MessageId>,
    got_request: bool,
    sent_bye: bool,
    received_bye: bool,
    queued: VecDeque<MessageId>,
    sent: Vec<MessageId>,
    received: Vec<MessageId>,
    seen_data: BTreeSet<MessageId>,
    bytes_sent: u64,
    bytes_received: u64,
    duplicate_data: u64,
    rejected_data: u64,
    abort_reason: Option<String>,
}

impl SyncSession {
    pub fn new(cache: CacheStore, now: u64, config: SessionConfig) -> Self {
        Self {
            cache,
            now,
            config,
            phase: Phase::Hello,
            peer: None,
            requested: BTreeSet::new(),
            got_request: false,
            sent_bye: false,
            received_bye: false,
            queued: VecDeque::new(),
            sent: Vec::new(),
            received: Vec::new(),
            seen_data: BTreeSet::new(),
            bytes_sent: 0,
            bytes_received: 0,
            duplicate_data: 0,
            rejected_data: 0,
            abort_reason: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.phase, Phase::Done | Phase::Aborted)
    }

    /// Frames to send when the session opens.
    pub fn start(&mut self) -> Vec<Frame> {
        vec![Frame::Hello { version: self.config.version, node_id: self.config.node_id.clone() }]
    }

    /// Accounts for a frame actually written to the channel.
    pub fn record_sent(&mut self, frame: &Frame) {
        self.bytes_sent += frame.encoded_len() as u64;
        if let Frame::Data(_) = frame {
            if let Some(id) = self.queued.pop_front() {
                self.sent.push(id);
            }
        }
    }

    /// Marks the session aborted, e.g. because the channel failed.
    pub fn abort(&mut self, reason: impl Into<String>) {
        if !self.is_finished() {
            self.phase = Phase::Aborted;
            self.abort_reason = Some(reason.into());
        }
    }

    fn protocol_error(&mut self, what: &str) -> Vec<Frame> {
        self.abort(format!("protocol error: unexpected {what} in phase {:?}", self.phase));
        if self.sent_bye {
            Vec::new()
        } else {
            self.sent_bye = true;
            vec![Frame::Bye]
        }
    }

    /// Processes one frame from the peer, returning the frames to send.
    pub fn handle(&mut self, frame: Frame) -> Vec<Frame> {
        self.bytes_received += frame.encoded_len() as u64;
        if self.is_finished() {
            return Vec::new();
        }
        match (self.phase, frame) {
            (Phase::Hello, Frame::Hello { version, node_id }) => {
                self.peer = Some(node_id);
                if version != self.config.version {
                    self.sent_bye = true;
                    self.abort(format!("protocol version mismatch: peer {version}, local {}", self.config.version));
                    return vec![Frame::Bye];
                }
                self.phase = Phase::Vector;
                vec![Frame::Vector(self.cache.summary_vector_at(self.now))]
            }
            (Phase::Vector, Frame::Vector(vector)) => {
                let wanted: Vec<MessageId> = vector
                    .entries()
                    .iter()
                    .map(|(id, _)| *id)
                    .filter(|id| !self.cache.contains(id))
                    .collect();
                self.requested = wanted.iter().copied().collect();
                self.phase = Phase::Transfer;
                vec![Frame::Request(wanted)]
            }
            (Phase::Transfer, Frame::Request(ids)) if !self.got_request => {
                self.got_request = true;
                let mut out: Vec<Frame> = self
                    .outgoing(ids)
                    .into_iter()
                    .map(|(id, bytes)| {
                        self.queued.push_back(id);
                        Frame::Data(bytes)
                    })
                    .collect();
                out.push(Frame::Bye);
                self.sent_bye = true;
                self.maybe_done();
                out
            }
            (Phase::Transfer, Frame::Data(bytes)) => {
                self.accept_data(&bytes);
                Vec::new()
            }
            (Phase::Transfer, Frame::Bye) if self.got_request => {
                self.received_bye = true;
                self.maybe_done();
                Vec::new()
            }
            (_, Frame::Bye) => {
                self.received_bye = true;
                self.abort("peer ended the session early");
                if self.sent_bye {
                    Vec::new()
                } else {
                    self.sent_bye = true;
                    vec![Frame::Bye]
                }
            }
            (_, other) => self.protocol_error(other.name()),
        }
    }

    fn maybe_done(&mut self) {
        if self.sent_bye && self.received_bye && self.phase == Phase::Transfer {
            self.phase = Phase::Done;
        }
    }

    /// Requested messages we hold and that are still live, in transfer order.
    fn outgoing(&self, ids: Vec<MessageId>) -> Vec<(MessageId, Vec<u8>)> {
        let unique: BTreeSet<MessageId> = ids.into_iter().collect();
        let mut msgs: Vec<_> = unique
            .into_iter()
            .filter_map(|id| self.cache.get(&id).ok())
            .filter(|m| !m.is_expired(self.now))
            .collect();
        match self.config.order {
            TransferOrder::OldestFirst => msgs.sort_by_key(|m| (m.created_at(), m.id())),
            TransferOrder::Random(seed) => {
                msgs.sort_by_key(|m| m.id());
                msgs.shuffle(&mut rand::rngs::StdRng::seed_from_u64(seed));
            }
        }
        msgs.into_iter().map(|m| (m.id(), m.encode_canonical())).collect()
    }

    fn accept_data(&mut self, bytes: &[u8]) {
        let Ok(msg) = crate::message::Message::decode(bytes) else {
            self.rejected_data += 1;
            return;
        };
        let id = msg.id();
        if !self.seen_data.insert(id) {
            self.duplicate_data += 1;
            return;
        }
        if !self.requested.contains(&id) {
            self.rejected_data += 1;
            return;
        }
        match self.cache.insert(msg, self.now) {
            Ok(InsertOutcome::New) => self.received.push(id),
            Ok(InsertOutcome::Duplicate) => {}
            Ok(_) => self.rejected_data += 1,
            Err(e) => {
                tracing::warn!(error = %e, "failed to store received message");
                self.rejected_data += 1;
            }
        }
    }

    pub fn report(&self) -> SessionReport {
        SessionReport {
            peer: self.peer.clone(),
            phase: self.phase,
            abort_reason: self.abort_reason.clone(),
            sent: self.sent.clone(),
            received: self.received.clone(),
            bytes_sent: self.bytes_sent,
            bytes_received: self.bytes_received,
            duplicate_data_frames: self.duplicate_data,
            rejected_data_frames: self.rejected_data,
        }
    }
}
