//! Cache changes relayed to `/events` subscribers.
//!
//! One bridge thread reads the cache subscription, which delivers in commit
//! order, and republishes on a bounded broadcast channel. A subscriber that
//! falls more than the buffer behind gets a final `dropped` event and is
//! disconnected.

use std::sync::{Arc, Weak};
use std::time::Duration;

use oppweb_core::{CacheEventKind, MessageId};
use serde::Serialize;

use crate::Inner;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateKind {
    Inserted,
    Removed,
}

impl UpdateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateKind::Inserted => "inserted",
            UpdateKind::Removed => "removed",
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct UpdateEvent {
    /// Position in commit order, starting at 1.
    pub seq: u64,
    pub kind: UpdateKind,
    pub service: String,
    pub id: MessageId,
    pub timestamp: u64,
}

// cap on remembered expired ids; forgetting one only turns a 410 into a 404
const GONE_LIMIT: usize = 100_000;

pub(crate) fn spawn_bridge(inner: &Arc<Inner>) {
    let events = inner.cache.subscribe();
    let weak: Weak<Inner> = Arc::downgrade(inner);
    std::thread::Builder::new()
        .name("portal-events".into())
        .spawn(move || {
            let mut seq = 0;
            loop {
                let ev = match events.recv_timeout(Duration::from_millis(200)) {
                    Ok(ev) => ev,
                    Err(()) => return,
                };
                let Some(inner) = weak.upgrade() else { return };
                let Some(ev) = ev else { continue };
                let kind = match ev.kind {
                    CacheEventKind::Inserted => UpdateKind::Inserted,
                    CacheEventKind::RemovedExpired => {
                        let mut gone = inner.gone.lock();
                        if gone.len() >= GONE_LIMIT {
                            gone.clear();
                        }
                        gone.insert(ev.id);
                        UpdateKind::Removed
                    }
                    CacheEventKind::RemovedExplicit => UpdateKind::Removed,
                };
                seq += 1;
                let update = UpdateEvent { seq, kind, service: ev.service, id: ev.id, timestamp: (inner.clock)() };
                // no receivers is fine
                let _ = inner.events.send(update);
            }
        })
        .expect("spawn event bridge");
}
