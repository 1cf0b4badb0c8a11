//! Pairwise epidemic anti-entropy.
//!
//! Two peers exchange summary vectors of the messages they hold, request
//! what they lack, and transfer the difference. The protocol logic lives in
//! the sans-I/O [`SyncSession`]; [`transport`] drives it over byte streams.

mod frame;
mod session;
pub mod transport;

use serde::Serialize;

use crate::message::MessageId;

pub use frame::{Frame, FrameError, HEADER_LEN, MAX_FRAME_LEN, PROTOCOL_VERSION};
pub use session::{Phase, SessionConfig, SessionReport, SyncSession, TransferOrder};
pub use transport::{pipe, run_local_pair, run_session, run_tcp_session, PipeReader, PipeWriter};

/// Compact listing of held messages: (id, encoded size), sorted by id
/// without duplicates.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize)]
pub struct SummaryVector {
    entries: Vec<(MessageId, u64)>,
}

impl SummaryVector {
    /// Builds a vector from entries; sorts and drops duplicate ids.
    pub fn new(mut entries: Vec<(MessageId, u64)>) -> Self {
        entries.sort();
        entries.dedup_by_key(|e| e.0);
        Self { entries }
    }

    /// Entries must already be sorted by id and unique.
    pub(crate) fn from_sorted(entries: Vec<(MessageId, u64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        Self { entries }
    }

    pub fn entries(&self) -> &[(MessageId, u64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &MessageId) -> bool {
        self.entries.binary_search_by_key(id, |e| e.0).is_ok()
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.1).sum()
    }
}
